"""
Drop-Bottleneck 라이브러리 및 실험 하네스
"""

__version__ = "1.0.0"

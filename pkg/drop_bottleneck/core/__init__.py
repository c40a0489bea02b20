"""
핵심 모듈 패키지
"""

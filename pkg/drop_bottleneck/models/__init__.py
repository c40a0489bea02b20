"""
데이터 모델 패키지
"""

"""
서비스 모듈 패키지
"""

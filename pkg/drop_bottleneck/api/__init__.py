"""
명령행 인터페이스 패키지
"""

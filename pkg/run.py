#!/usr/bin/env python3
"""
Drop-Bottleneck 실험 실행 스크립트
"""
import os
import sys

# 프로젝트 루트를 Python path에 추가
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from drop_bottleneck.api.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())

"""
應用程式入口點
"""
import sys
import os

# 添加src目錄到Python路徑
sys.path.insert(0, os.path.dirname(__file__))

from src.app import main

if __name__ == "__main__":
    sys.exit(main())

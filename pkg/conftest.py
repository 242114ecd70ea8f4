import os
import sys

# Модули лежат в корне репозитория (config, fields, services, ...)
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

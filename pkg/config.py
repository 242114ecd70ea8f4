import os
from dotenv import load_dotenv

# Загружаем переменные окружения из .env файла
load_dotenv()

# Версия инструмента, записывается в manifest.txt каждого артефакта
TOOL_VERSION = '1.0.0'

# Уровень логирования
LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO').upper()

# Ограничение числа потоков (на результат не влияет)
ADPF_THREADS = max(1, int(os.getenv('ADPF_THREADS', '1')))

# Нижняя граница поля аномалий A
EPSILON_A = float(os.getenv('EPSILON_A', '0.05'))

# Истинное A ниже этого уровня считается носителем аномалии
ANOMALY_SUPPORT_LEVEL = float(os.getenv('ANOMALY_SUPPORT_LEVEL', '0.9'))


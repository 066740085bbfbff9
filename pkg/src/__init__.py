"""
Пакет мета-обучения для восстановления траектории квадрокоптера при отказах винтов.
"""

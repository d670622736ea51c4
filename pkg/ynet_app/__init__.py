"""
YNet App - командная строка и сервисы поверх ynet_core
"""

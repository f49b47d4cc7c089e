import re


CROSS_COEFFICIENT_COLUMN_PATTERN = re.compile(r"^c_(?P<technology>.+)$")

KEY_PATTERN = re.compile(r"^[a-z][a-z0-9_]*$")

DISPLAY_NAME_PATTERN = re.compile(r"^[A-Za-z][A-Za-z0-9_]*$")

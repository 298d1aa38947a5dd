import math
from datetime import datetime, timezone
from urllib.parse import quote, unquote


def format_float(value):
    """Shortest decimal text that parses back to the identical float."""
    return repr(float(value))


def format_distance(value):
    if value is None:
        return "-"
    if math.isinf(value):
        return "inf"
    return f"{value:.6f}"


def format_timestamp(dt):
    if not dt:
        return ""
    return dt.isoformat()


def parse_timestamp(raw_ts):
    if not raw_ts:
        return None
    value = raw_ts.strip()
    if not value:
        return None
    if value.endswith("Z"):
        value = value[:-1] + "+00:00"
    try:
        parsed = datetime.fromisoformat(value)
    except ValueError:
        return None
    if parsed.tzinfo:
        parsed = parsed.astimezone(timezone.utc).replace(tzinfo=None)
    return parsed


def encode_meta(text):
    # ',', '=' and line breaks are structural in the sample header line
    return quote(text, safe=" !#$&'()*+-./:;<>?@[]^_`{|}~")


def decode_meta(text):
    return unquote(text)

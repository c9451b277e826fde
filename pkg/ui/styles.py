from typing import Any, Dict, Optional

CARD_WIDTH = 60


def format_value(value: Any) -> str:
    if value is None:
        return "undefined"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(v) for v in value)
    return str(value)


def metric_card(label: str, value: Any, delta: Optional[float] = None) -> str:
    delta_text = ""
    if delta is not None:
        sign = "+" if delta >= 0 else ""
        delta_text = f" ({sign}{delta:.3g})"
    return f"{label.upper():<24}{format_value(value)}{delta_text}"


def summary_card(title: str, metrics: Dict[str, Any], exit_code: int) -> str:
    """Plain text block printed after each command."""
    status = {0: "OK", 1: "VIOLATION", 2: "INVALID INPUT"}.get(exit_code, str(exit_code))
    rule = "=" * CARD_WIDTH
    lines = [rule, f"{title}  [{status}]", "-" * CARD_WIDTH]
    lines += [metric_card(label, value) for label, value in metrics.items()]
    lines.append(rule)
    return "\n".join(lines)

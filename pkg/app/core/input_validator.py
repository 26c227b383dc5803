"""
weakkv - Input Validator
Prüft Schlüssel, Werte, Bereiche und Benchmark-Parameter
"""

import re
from dataclasses import dataclass
from typing import List, Optional

from app.config import Workload


@dataclass
class ValidationResult:
    """Ergebnis einer Validierung"""
    valid: bool
    message: str
    corrected_value: Optional[object] = None
    suggestion: Optional[str] = None


class KeyValueValidator:
    """
    Validiert Eingaben der Engine-Primitive.

    Schlüssel: 1..max_key Bytes. Werte: 1..max_value Bytes (Länge 0 ist
    für Tombstones reserviert, dafür gibt es delete).
    """

    # Dauerangaben für sweep-window: 1ms, 0.5s, 10s, 2m
    DURATION_PATTERN = re.compile(r'^\s*(\d+(?:\.\d+)?)\s*(ms|s|m)?\s*$')
    DURATION_UNITS = {"ms": 0.001, "s": 1.0, "m": 60.0, None: 1.0}

    def __init__(self, max_key: int = 1024, max_value: int = 65536):
        self.max_key = max_key
        self.max_value = max_value

    def validate_key(self, key: bytes) -> ValidationResult:
        if not isinstance(key, (bytes, bytearray)):
            return ValidationResult(
                valid=False,
                message=f"Schlüssel muss bytes sein, nicht {type(key).__name__}.",
                suggestion="key.encode()"
            )
        if len(key) == 0:
            return ValidationResult(valid=False, message="Leere Schlüssel sind nicht erlaubt.")
        if len(key) > self.max_key:
            return ValidationResult(
                valid=False,
                message=f"Schlüssel hat {len(key)} Bytes, erlaubt sind höchstens {self.max_key}."
            )
        return ValidationResult(valid=True, message="OK")

    def validate_value(self, value: bytes) -> ValidationResult:
        if not isinstance(value, (bytes, bytearray)):
            return ValidationResult(
                valid=False,
                message=f"Wert muss bytes sein, nicht {type(value).__name__}."
            )
        if len(value) == 0:
            return ValidationResult(
                valid=False,
                message="Leere Werte sind Tombstones und nur über delete erlaubt.",
                suggestion="delete(txn, key)"
            )
        if len(value) > self.max_value:
            return ValidationResult(
                valid=False,
                message=f"Wert hat {len(value)} Bytes, erlaubt sind höchstens {self.max_value}."
            )
        return ValidationResult(valid=True, message="OK")

    def validate_range(self, low: bytes, high: bytes) -> ValidationResult:
        for key in (low, high):
            result = self.validate_key(key)
            if not result.valid:
                return result
        if low > high:
            return ValidationResult(
                valid=False,
                message=f"Ungültiger Bereich: {low!r} > {high!r}.",
                corrected_value=(high, low)
            )
        return ValidationResult(valid=True, message="OK")

    def validate_workload(
        self,
        workload: str,
        records: int,
        threads: int,
        read_ratio: float,
        key_size: int,
        value_size: int,
        persist_interval: float
    ) -> ValidationResult:
        """Prüft eine Benchmark-Konfiguration"""
        try:
            kind = Workload(workload)
        except ValueError:
            return ValidationResult(
                valid=False,
                message=f"Unbekannter Workload '{workload}'.",
                suggestion=", ".join(w.value for w in Workload)
            )
        if records <= 0 or threads <= 0:
            return ValidationResult(valid=False, message="records und threads müssen > 0 sein.")
        if not 0.0 <= read_ratio <= 1.0:
            return ValidationResult(
                valid=False,
                message=f"read_ratio {read_ratio} liegt nicht in [0, 1].",
                corrected_value=min(max(read_ratio, 0.0), 1.0)
            )
        if key_size <= 0 or value_size <= 0:
            return ValidationResult(valid=False, message="Schlüssel- und Wertgrösse müssen > 0 sein.")
        if key_size > self.max_key or value_size > self.max_value:
            return ValidationResult(
                valid=False,
                message=f"Grössen überschreiten max_key={self.max_key} / max_value={self.max_value}."
            )
        # Schlüssel sind dezimal kodiert: key_size Stellen müssen reichen
        key_space = records * 100 if kind == Workload.INSERTION else records
        if len(str(key_space)) > key_size:
            return ValidationResult(
                valid=False,
                message=f"{key_size} Bytes reichen nicht für {key_space} dezimale Schlüssel.",
                suggestion=str(len(str(key_space)))
            )
        if persist_interval < 0:
            return ValidationResult(valid=False, message="persist_interval muss >= 0 sein.")
        return ValidationResult(valid=True, message="OK", corrected_value=kind)

    def parse_durations(self, text: str) -> ValidationResult:
        """'1ms,100ms,10s' -> [0.001, 0.1, 10.0]"""
        values: List[float] = []
        for part in text.split(","):
            if not part.strip():
                continue
            match = self.DURATION_PATTERN.match(part)
            if not match:
                return ValidationResult(
                    valid=False,
                    message=f"Ungültige Dauer '{part.strip()}'.",
                    suggestion="1ms,100ms,1s,10s"
                )
            values.append(float(match.group(1)) * self.DURATION_UNITS[match.group(2)])
        if not values:
            return ValidationResult(valid=False, message="Keine Intervalle angegeben.")
        return ValidationResult(valid=True, message="OK", corrected_value=values)


# Singleton mit Standardgrenzen
default_validator = KeyValueValidator()

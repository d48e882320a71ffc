from uqlib.calibration.temperature import (
    T_MAX,
    T_MIN,
    TemperatureFit,
    TemperatureScaler,
    apply_temperature,
    fit_temperature,
    nll,
    temperature_probabilities,
)

__all__ = [
    "T_MAX",
    "T_MIN",
    "TemperatureFit",
    "TemperatureScaler",
    "apply_temperature",
    "fit_temperature",
    "nll",
    "temperature_probabilities",
]

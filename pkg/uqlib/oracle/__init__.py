from uqlib.oracle.oracle import (
    BUILTINS,
    ConstantOracle,
    LinearMaskOracle,
    Oracle,
    OracleMode,
    OracleSpec,
    PlantedOracle,
    SubprocessOracle,
    build_oracle,
    predict,
    predict_many,
)

__all__ = [
    "BUILTINS",
    "ConstantOracle",
    "LinearMaskOracle",
    "Oracle",
    "OracleMode",
    "OracleSpec",
    "PlantedOracle",
    "SubprocessOracle",
    "build_oracle",
    "predict",
    "predict_many",
]

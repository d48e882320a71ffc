from uqlib.uncertainty.uncertainty import (
    EvidentialOutput,
    UncertaintyScores,
    UncertaintySource,
    disagreement,
    evidential_map,
    mutual_information,
    normalize_uncertainty,
    predictive_entropy,
    uncertainty_scores,
)

__all__ = [
    "EvidentialOutput",
    "UncertaintyScores",
    "UncertaintySource",
    "disagreement",
    "evidential_map",
    "mutual_information",
    "normalize_uncertainty",
    "predictive_entropy",
    "uncertainty_scores",
]

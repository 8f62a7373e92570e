"""Cognitive-parameter estimation: response functions, channel fitters, EC/SC assembly."""

from .dina import DINAFit, dina_cell_probability, fit_dina_em, guess_slip_mix
from .emcore import EMConfig
from .hodina import MCMCConfig, fit_hodina_mcmc, hodina_cell_probability
from .irt import IRTFit, fit_irt_em
from .mirt import MIRTFit, fit_mirt_em
from .params import (
    BINARY,
    CONTINUOUS,
    VARIANT_LDM_HMI,
    VARIANT_LDM_ID,
    CognitiveParameterSets,
    DINAItemParams,
    DINALearnerParams,
    HoDINAParams,
    IRTItemParams,
    IRTLearnerParams,
    MIRTItemParams,
    MIRTLearnerParams,
    build_parameter_sets,
    channels_to_json,
    latent_profiles,
)
from .responses import (
    dina_ideal_response,
    dina_response,
    hodina_attr_prob,
    irt_response,
    mirt_response,
)

__all__ = [
    "BINARY",
    "CONTINUOUS",
    "VARIANT_LDM_HMI",
    "VARIANT_LDM_ID",
    "CognitiveParameterSets",
    "DINAFit",
    "DINAItemParams",
    "DINALearnerParams",
    "EMConfig",
    "HoDINAParams",
    "IRTFit",
    "IRTItemParams",
    "IRTLearnerParams",
    "MCMCConfig",
    "MIRTFit",
    "MIRTItemParams",
    "MIRTLearnerParams",
    "build_parameter_sets",
    "channels_to_json",
    "dina_cell_probability",
    "dina_ideal_response",
    "dina_response",
    "fit_dina_em",
    "fit_hodina_mcmc",
    "fit_irt_em",
    "fit_mirt_em",
    "guess_slip_mix",
    "hodina_attr_prob",
    "hodina_cell_probability",
    "irt_response",
    "latent_profiles",
    "mirt_response",
]

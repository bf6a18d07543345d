"""Simulator and security analytics for hyperentangled OAM/TAM key distribution."""

from hyperqkd.states import (
    AmbiguousErasure,
    DegenerateCorrelation,
    SpinDensity,
    TwoPhotonState,
    born_distribution,
    chsh_value,
    correlation_E,
    erase_oam,
    linear_product_state,
    make_source_state,
    negativity,
    polarization_coincidence,
    project_measure,
    project_onto,
    spin_density,
    spin_flip,
    visibility,
)

__version__ = "0.1.0"

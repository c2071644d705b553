"""Figure production from the simulator's CSV and manifest outputs.

Everything here re-reads the delimited artifacts written by the scan CLI;
no physics is recomputed, so figures stay reproducible from the shipped
files alone.
"""

from .tables import EmptyTable, PlotDataError, SchemaMismatch, load_manifest
from .tables import load_table
from .figures import coupling_dispersion, field_map, pair_map, save
from .figures import spectral_map, spectrum_cuts

__all__ = [
    "EmptyTable",
    "PlotDataError",
    "SchemaMismatch",
    "coupling_dispersion",
    "field_map",
    "load_manifest",
    "load_table",
    "pair_map",
    "save",
    "spectral_map",
    "spectrum_cuts",
]

__version__ = "0.1.0"

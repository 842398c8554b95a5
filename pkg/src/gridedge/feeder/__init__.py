from .models import (
    HEAD_SENSOR,
    LATERAL_SENSOR,
    BusRecord,
    FeederDescription,
    LineRecord,
    LoadRecord,
    SensorPlacement,
)
from .admittance import AdmittanceModel, build_admittance
from .builder import radial_feeder, stock_feeder, two_bus_feeder
from .loader import dump_feeder, load_feeder

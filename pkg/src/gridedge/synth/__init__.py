from .models import (
    APPLIANCE,
    EV,
    GroundTruth,
    LoadMatrix,
    MeasurementSet,
    ScenarioConfig,
    TruthEvent,
    load_channels,
    sensor_channels,
)
from .loads import add_event, generate_ground_truth, solar_pattern
from .sampling import (
    calibrate_bounds,
    feeder_readings,
    measurement_operator,
    sample_feeder_sensors,
    sample_smart_meters,
    select_sensors,
    synthesize,
)

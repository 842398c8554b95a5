FEEDER_FORMAT = "gridedge-feeder/1"
EXPERIMENT_FORMAT = "gridedge-experiment/1"
MANIFEST_FORMAT = "gridedge-manifest/1"

MINUTES_PER_DAY = 1440

# sparsity coefficient used for a one-day horizon at minute resolution
LAMBDA_REFERENCE = 0.05
LAMBDA_REFERENCE_HORIZON = 1440

SMART_METER_ACCURACY = 0.002
DPMU_ACCURACY = 0.0002
FEEDER_BOUND_FRACTION = 0.002
BOUND_FLOOR = 1.0

POWER_FACTOR_RANGE = (0.9, 0.95)
METER_INTERVAL = 15

PHASES = ("a", "b", "c")
SENSOR_ROWS = 6

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

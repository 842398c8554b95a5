from .models import (
    END,
    START,
    DetectedEvent,
    DisaggregationFit,
    RocCurve,
    RocPoint,
    SolarPattern,
)
from .events import (
    detect_ev_events,
    detection_opportunities,
    roc_sweep,
    score_detections,
    truth_ev_events,
)
from .solar import (
    bandpass_remove,
    correlation,
    daylight_mask,
    disaggregate_btm,
    disaggregate_feeder,
    extract_pattern,
    pattern_from_series,
    rms_error,
)

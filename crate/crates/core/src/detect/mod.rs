//! Normalisation, segmentation, reconstruction scoring and the two anomaly
//! detection protocols.

mod protocol;
mod recording;
mod score;
mod segment;

pub use protocol::{
    detect_multi_sensor, detect_single_sensor, multi_sensor_scores, persistent_channels,
    score_segment, single_sensor_scores, ChannelSeries, CsdReport, MultiSensorConfig, Protocol,
    ReportRow, SingleSensorConfig, ThresholdSource, DEFAULT_PERSISTENCE, DEFAULT_SEGMENT_LEN,
    DEFAULT_WINDOW_COUNT, DEFAULT_WINDOW_LEN, REPORT_SCHEMA_VERSION,
};
pub use recording::{
    normalize, normalize_channel, GroundTruth, Normalized, SampleRange, SensorRecording,
    GROUND_TRUTH_SCHEMA_VERSION,
};
pub use score::{
    calibrate_threshold, column_csd, csd, projector, reconstruct, Calibration, ThresholdOrigin,
    DEFAULT_ALPHA,
};
pub use segment::{segment, window_blocks, SegmentMatrix};

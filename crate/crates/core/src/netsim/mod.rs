//! Deterministic network and compute cost model.

pub mod cost;
pub mod payload;
pub mod report;
pub mod round;
pub mod timeline;

pub use cost::{CostModel, LinkState, Medium, NetworkState, DEFAULT_TEXT_BYTES_PER_TOKEN, DEFAULT_WIRE_DTYPE_BYTES};
pub use payload::{kv_payload_bytes, text_payload_bytes, PublicModel, PUBLIC_SENDERS};
pub use report::{read_csv, write_csv, MetricsRow, CSV_HEADER};
pub use round::{crossover_bandwidth, simulate_round, RoundTrace, SenderTrace};
pub use timeline::{Phase, Segment, Timeline};

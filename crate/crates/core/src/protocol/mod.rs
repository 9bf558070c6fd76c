pub mod log;
pub mod medium;
pub mod rephrase;
pub mod session;

pub use log::{Message, MessageKind, MessageLog};
pub use medium::{select_medium, MediumDecision, QosSpec, SessionShape};
pub use rephrase::{
    model_rewrite, party_offset, rephrase, rephrase_for_senders, rewrite_corpus, RephraseKind, RephrasePolicy, SynonymTable,
};
pub use session::{
    bidirectional_round, c2c_decode, standalone_decode, t2t_decode, Bidirectional, FedSession, Link, Outcome, MAX_CONTRIBUTION,
};

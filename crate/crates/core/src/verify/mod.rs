//! White-box verification: probe events in, milestone progress and
//! verdicts out.

mod event;
mod machine;
mod predicate;
mod query;
mod replay;
mod sink;
mod verdict;

pub use event::{MalformedEvent, ProbeEvent, PROBE_PROTOCOL_VERSION};
pub use machine::{register_handlers, EventRef, MachineStatus, MilestoneMachine, StepState, StepStatus, StepTransition};
pub use predicate::{eval_predicate, lookup, step_matches};
pub use query::{poll_state_query, PollerSet, QueryError, QueryPoller, QUERY_COMMAND_TIMEOUT};
pub use replay::{read_journal, replay_trace, replay_verdict, ReplayError, ReplayStats};
pub use sink::{
    open_sink, BindError, Delivered, EventSink, IngestError, SinkHandle, SinkOptions, SinkStats, DEFAULT_QUEUE_CAPACITY,
    ENQUEUE_WAIT, JOURNAL_NOTE_PREFIX, MAX_LINE_BYTES,
};
pub use verdict::{verdict, FailureReason, TaskVerdict};

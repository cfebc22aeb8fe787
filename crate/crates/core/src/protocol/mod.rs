//! Active-player schedules, the interaction loop, and stopping-time queries.

mod episode;
mod schedule;
mod trace;

pub use episode::{run_episode, EpisodeError, EpisodeOptions, PlayerOrder};
pub use schedule::{make_schedule, Schedule, ScheduleError, ScheduleKind};
pub use trace::{PullRecord, RunTrace};

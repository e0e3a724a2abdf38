use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Ingestion,
    ProfilerRetrain,
    GeneratorRetrain,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Ingestion, Task::ProfilerRetrain, Task::GeneratorRetrain];
}

/// Task intervals in logical hours.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Cadence {
    pub ingestion_hours: Timestamp,
    pub profiler_hours: Timestamp,
    pub generator_hours: Timestamp,
}

impl Default for Cadence {
    fn default() -> Self {
        Self {
            ingestion_hours: 12,
            profiler_hours: 7 * 24,
            generator_hours: 24,
        }
    }
}

impl Cadence {
    pub fn validate(&self) -> Result<()> {
        if self.ingestion_hours == 0 || self.generator_hours == 0 {
            return Err(Error::invalid("cadence", "intervals must be positive"));
        }
        if !(24..=30 * 24).contains(&self.profiler_hours) {
            return Err(Error::invalid(
                "cadence.profiler_hours",
                format!("{} outside 24..=720", self.profiler_hours),
            ));
        }
        Ok(())
    }

    pub fn interval(&self, task: Task) -> Timestamp {
        match task {
            Task::Ingestion => self.ingestion_hours,
            Task::ProfilerRetrain => self.profiler_hours,
            Task::GeneratorRetrain => self.generator_hours,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DueTask {
    pub task: Task,
    pub at: Timestamp,
    /// Requested explicitly rather than by the clock.
    #[serde(default)]
    pub manual: bool,
}

/// Logical clock starting at 0. Each task falls due at every multiple of
/// its interval.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scheduler {
    pub cadence: Cadence,
    pub now: Timestamp,
}

impl Scheduler {
    pub fn new(cadence: Cadence) -> Result<Self> {
        cadence.validate()?;
        Ok(Self { cadence, now: 0 })
    }

    /// Moves the clock forward and lists every occurrence that fell due in
    /// `(old, new]`, ordered by time then task.
    pub fn advance(&mut self, hours: Timestamp) -> Vec<DueTask> {
        let (from, to) = (self.now, self.now.saturating_add(hours));
        self.now = to;
        let mut due: Vec<DueTask> = Task::ALL
            .iter()
            .flat_map(|&task| {
                let every = self.cadence.interval(task);
                (from / every + 1..=to / every).map(move |k| DueTask {
                    task,
                    at: k * every,
                    manual: false,
                })
            })
            .collect();
        due.sort_by_key(|d| (d.at, d.task));
        due
    }

    pub fn trigger(&self, task: Task) -> DueTask {
        DueTask {
            task,
            at: self.now,
            manual: true,
        }
    }
}

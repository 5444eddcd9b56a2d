use crate::controller::SolveSummary;
use crate::model::{Input, State};
use crate::scalar::Real;

/// One cooperative agent at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTick<T> {
    pub id: usize,
    /// True state at the start of the tick.
    pub state: State<T>,
    /// Input applied for the coming control period; `None` on the final record.
    pub input: Option<Input<T>>,
    pub solve: Option<SolveSummary<T>>,
    pub fallback: bool,
    /// Agent ids in the obstacle slots, `None` for padding.
    pub selected: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonCoopTick<T> {
    pub id: usize,
    pub p: [T; 3],
    pub v: [T; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord<T> {
    pub tick: u64,
    pub time: T,
    pub agents: Vec<AgentTick<T>>,
    pub noncoop: Vec<NonCoopTick<T>>,
}

/// Closest approach within one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Separation<T> {
    /// Between cooperative agents; infinite with fewer than two.
    pub cooperative: T,
    /// Between a cooperative agent and a scripted one; infinite without scripts.
    pub non_cooperative: T,
}

impl<T: Real> Separation<T> {
    pub fn overall(&self) -> T {
        self.cooperative.min(self.non_cooperative)
    }
}

fn dist<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<T>().sqrt()
}

impl<T: Real> TickRecord<T> {
    pub fn separation(&self) -> Separation<T> {
        let mut coop = T::infinity();
        let mut nc = T::infinity();
        for (i, a) in self.agents.iter().enumerate() {
            for b in &self.agents[i + 1..] {
                coop = coop.min(dist(&a.state.p, &b.state.p));
            }
            for o in &self.noncoop {
                nc = nc.min(dist(&a.state.p, &o.p));
            }
        }
        Separation { cooperative: coop, non_cooperative: nc }
    }
}

/// Everything recorded during a run, one record per tick including the
/// initial one.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog<T> {
    pub control_dt: T,
    /// Wall-clock budget per solve, s.
    pub budget: f64,
    pub records: Vec<TickRecord<T>>,
}

impl<T: Real> RunLog<T> {
    pub fn separations(&self) -> Vec<Separation<T>> {
        self.records.iter().map(TickRecord::separation).collect()
    }

    /// Minimum distance between any two vehicles over the whole run.
    pub fn min_distance(&self) -> T {
        self.separations().iter().map(Separation::overall).fold(T::infinity(), T::min)
    }

    pub fn min_cooperative_distance(&self) -> T {
        self.separations().iter().map(|s| s.cooperative).fold(T::infinity(), T::min)
    }

    pub fn min_non_cooperative_distance(&self) -> T {
        self.separations().iter().map(|s| s.non_cooperative).fold(T::infinity(), T::min)
    }

    pub fn solves(&self) -> impl Iterator<Item = (&AgentTick<T>, &SolveSummary<T>)> {
        self.records.iter().flat_map(|r| r.agents.iter().filter_map(|a| a.solve.as_ref().map(|s| (a, s))))
    }

    pub fn final_record(&self) -> &TickRecord<T> {
        self.records.last().expect("log holds the initial record")
    }
}

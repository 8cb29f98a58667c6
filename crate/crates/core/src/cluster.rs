//! Lockstep simulation of `m` machines with metered communication,
//! computation and memory.

use serde::{Deserialize, Serialize};

use crate::data::{stream_rng, SimRng};
use crate::error::{check_dim, invalid, Error, Result};

/// Resource counters for one run.
///
/// Work charged between two collectives forms a phase; a phase costs the
/// largest per-machine charge in `ops_parallel` and the sum in
/// `ops_total`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResourceLedger {
    pub rounds: u64,
    pub vectors_sent_per_machine: u64,
    pub vector_ops: Vec<u64>,
    pub ops_parallel: u64,
    pub peak_samples: Vec<usize>,
    pub peak_vectors: Vec<usize>,
    #[serde(skip)]
    phase: Vec<u64>,
}

impl ResourceLedger {
    pub fn new(m: usize) -> Self {
        Self {
            vector_ops: vec![0; m],
            peak_samples: vec![0; m],
            peak_vectors: vec![0; m],
            phase: vec![0; m],
            ..Default::default()
        }
    }

    pub fn ops_total(&self) -> u64 {
        self.vector_ops.iter().sum()
    }

    /// Elapsed parallel time including the still-open phase.
    pub fn ops_parallel(&self) -> u64 {
        self.ops_parallel + self.phase.iter().copied().max().unwrap_or(0)
    }

    pub fn max_peak_samples(&self) -> usize {
        self.peak_samples.iter().copied().max().unwrap_or(0)
    }

    pub fn max_peak_vectors(&self) -> usize {
        self.peak_vectors.iter().copied().max().unwrap_or(0)
    }

    fn close_phase(&mut self) {
        self.ops_parallel += self.phase.iter().copied().max().unwrap_or(0);
        self.phase.iter_mut().for_each(|p| *p = 0);
    }

    /// Snapshot with the open phase folded into `ops_parallel`.
    pub fn snapshot(&self) -> ResourceLedger {
        let mut s = self.clone();
        s.close_phase();
        s
    }
}

#[derive(Debug, Clone)]
struct Machine {
    rng: SimRng,
    resident_samples: usize,
    resident_vectors: usize,
    held: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ClusterSim {
    m: usize,
    machines: Vec<Machine>,
    ledger: ResourceLedger,
}

impl ClusterSim {
    /// Machine `i` draws from stream `i` of `seed`.
    pub fn new(m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(invalid("m", "must be at least 1"));
        }
        let machines = (0..m)
            .map(|i| Machine {
                rng: stream_rng(seed, i as u64),
                resident_samples: 0,
                resident_vectors: 0,
                held: None,
            })
            .collect();
        Ok(Self {
            m,
            machines,
            ledger: ResourceLedger::new(m),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn ledger(&self) -> ResourceLedger {
        self.ledger.snapshot()
    }

    pub fn rng(&mut self, machine: usize) -> Result<&mut SimRng> {
        self.check_machine(machine)?;
        Ok(&mut self.machines[machine].rng)
    }

    /// The vector last broadcast to `machine`.
    pub fn held(&self, machine: usize) -> Result<Option<&[f64]>> {
        self.check_machine(machine)?;
        Ok(self.machines[machine].held.as_deref())
    }

    fn check_machine(&self, machine: usize) -> Result<()> {
        if machine >= self.m {
            return Err(Error::MachineIndex { index: machine, m: self.m });
        }
        Ok(())
    }

    /// Exact mean of one vector per machine, summed in machine order.
    pub fn all_average(&mut self, local: &[Vec<f64>]) -> Result<Vec<f64>> {
        if local.len() != self.m {
            return Err(Error::WrongVectorCount {
                expected: self.m,
                got: local.len(),
            });
        }
        let d = local[0].len();
        for v in local {
            check_dim(d, v.len())?;
        }
        let mut sum = local[0].clone();
        for v in &local[1..] {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
        }
        if self.m > 1 {
            let inv = self.m as f64;
            sum.iter_mut().for_each(|s| *s /= inv);
        }
        self.collective();
        Ok(sum)
    }

    pub fn broadcast(&mut self, src: usize, v: &[f64]) -> Result<()> {
        self.check_machine(src)?;
        for machine in &mut self.machines {
            machine.held = Some(v.to_vec());
        }
        self.collective();
        Ok(())
    }

    fn collective(&mut self) {
        self.ledger.rounds += 1;
        self.ledger.vectors_sent_per_machine += 1;
        self.ledger.close_phase();
    }

    pub fn charge_vector_ops(&mut self, machine: usize, n_ops: u64) -> Result<()> {
        self.check_machine(machine)?;
        self.ledger.vector_ops[machine] += n_ops;
        self.ledger.phase[machine] += n_ops;
        Ok(())
    }

    /// Charges `n_ops` to every machine in the current phase.
    pub fn charge_all(&mut self, n_ops: u64) {
        for i in 0..self.m {
            self.ledger.vector_ops[i] += n_ops;
            self.ledger.phase[i] += n_ops;
        }
    }

    pub fn store_batch(&mut self, machine: usize, samples: usize) -> Result<()> {
        self.check_machine(machine)?;
        let mach = &mut self.machines[machine];
        mach.resident_samples += samples;
        let peak = &mut self.ledger.peak_samples[machine];
        *peak = (*peak).max(mach.resident_samples);
        Ok(())
    }

    pub fn release_batch(&mut self, machine: usize, samples: usize) -> Result<()> {
        self.check_machine(machine)?;
        let mach = &mut self.machines[machine];
        mach.resident_samples = mach.resident_samples.saturating_sub(samples);
        Ok(())
    }

    pub fn store_vectors(&mut self, machine: usize, count: usize) -> Result<()> {
        self.check_machine(machine)?;
        let mach = &mut self.machines[machine];
        mach.resident_vectors += count;
        let peak = &mut self.ledger.peak_vectors[machine];
        *peak = (*peak).max(mach.resident_vectors);
        Ok(())
    }

    pub fn release_vectors(&mut self, machine: usize, count: usize) -> Result<()> {
        self.check_machine(machine)?;
        let mach = &mut self.machines[machine];
        mach.resident_vectors = mach.resident_vectors.saturating_sub(count);
        Ok(())
    }

    pub fn resident_samples(&self, machine: usize) -> Result<usize> {
        self.check_machine(machine)?;
        Ok(self.machines[machine].resident_samples)
    }
}

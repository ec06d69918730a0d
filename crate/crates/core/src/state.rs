//! Aggregate system state: how many servers hold `j` jobs with the job in
//! service in phase `m`.
//!
//! Levels `j` run over `1..=b` and phases `m` over `1..=M`; idle servers are
//! counted separately. The fractional `S`-view is derived on demand.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SystemState {
    servers: usize,
    buffer: usize,
    phases: usize,
    idle: u64,
    /// Row-major `b x M`: entry `(j - 1) * M + (m - 1)`.
    counts: Vec<u64>,
}

impl SystemState {
    /// All servers idle.
    pub fn empty(servers: usize, buffer: usize, phases: usize) -> Result<Self> {
        Self::from_counts(servers, buffer, phases, &vec![0; buffer * phases])
    }

    /// Builds a state from a row-major `b x M` table of server counts; idle
    /// servers make up the remainder.
    pub fn from_counts(
        servers: usize,
        buffer: usize,
        phases: usize,
        counts: &[u64],
    ) -> Result<Self> {
        if servers == 0 || buffer == 0 || phases == 0 {
            return Err(Error::BadDimensions {
                servers,
                buffer,
                phases,
            });
        }
        if counts.len() != buffer * phases {
            return Err(Error::CountLength {
                expected: buffer * phases,
                got: counts.len(),
            });
        }
        let busy: u64 = counts.iter().sum();
        if busy > servers as u64 {
            return Err(Error::TooManyServers { busy, servers });
        }
        Ok(Self {
            servers,
            buffer,
            phases,
            idle: servers as u64 - busy,
            counts: counts.to_vec(),
        })
    }

    /// Builds a state from sparse `(j, m, count)` triples.
    pub fn from_cells(
        servers: usize,
        buffer: usize,
        phases: usize,
        cells: &[(usize, usize, u64)],
    ) -> Result<Self> {
        let mut counts = vec![0; buffer * phases];
        for &(level, phase, count) in cells {
            if level == 0 || level > buffer || phase == 0 || phase > phases {
                return Err(Error::CellOutOfRange { level, phase });
            }
            counts[(level - 1) * phases + (phase - 1)] += count;
        }
        Self::from_counts(servers, buffer, phases, &counts)
    }

    /// Inverse of [`SystemState::s_counts`]: rebuilds the state from the
    /// integer table `N s_{i,m}`.
    pub fn from_s_counts(servers: usize, buffer: usize, phases: usize, s: &[u64]) -> Result<Self> {
        if s.len() != buffer * phases {
            return Err(Error::CountLength {
                expected: buffer * phases,
                got: s.len(),
            });
        }
        let mut counts = vec![0; buffer * phases];
        for m in 0..phases {
            for j in 0..buffer {
                let here = s[j * phases + m];
                let above = if j + 1 < buffer {
                    s[(j + 1) * phases + m]
                } else {
                    0
                };
                if above > here {
                    return Err(Error::NotMonotone { phase: m + 1 });
                }
                counts[j * phases + m] = here - above;
            }
        }
        Self::from_counts(servers, buffer, phases, &counts)
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    pub fn buffer(&self) -> usize {
        self.buffer
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    pub fn idle(&self) -> u64 {
        self.idle
    }

    pub fn busy(&self) -> u64 {
        self.servers as u64 - self.idle
    }

    /// Row-major `b x M` counts.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    #[inline]
    fn idx(&self, level: usize, phase: usize) -> usize {
        (level - 1) * self.phases + (phase - 1)
    }

    fn check_cell(&self, level: usize, phase: usize) -> Result<()> {
        if level == 0 || level > self.buffer || phase == 0 || phase > self.phases {
            Err(Error::CellOutOfRange { level, phase })
        } else {
            Ok(())
        }
    }

    /// Number of servers with exactly `level` jobs whose job in service is in
    /// `phase` (both 1-based).
    #[inline]
    pub fn count(&self, level: usize, phase: usize) -> u64 {
        self.counts[self.idx(level, phase)]
    }

    /// Servers holding exactly `level` jobs; level 0 is the idle pool.
    pub fn level_count(&self, level: usize) -> u64 {
        if level == 0 {
            self.idle
        } else {
            let row = (level - 1) * self.phases;
            self.counts[row..row + self.phases].iter().sum()
        }
    }

    /// Busy servers whose job in service is in `phase`.
    pub fn phase_count(&self, phase: usize) -> u64 {
        (1..=self.buffer).map(|j| self.count(j, phase)).sum()
    }

    /// Total jobs in the system.
    pub fn total_jobs(&self) -> u64 {
        (1..=self.buffer)
            .map(|j| j as u64 * self.level_count(j))
            .sum()
    }

    /// Smallest occupied level, counting idle servers as level 0.
    pub fn min_level(&self) -> usize {
        if self.idle > 0 {
            return 0;
        }
        (1..=self.buffer)
            .find(|&j| self.level_count(j) > 0)
            .unwrap_or(self.buffer)
    }

    /// Integer S-view `N s_{i,m} = sum_{j >= i} n[j][m]`, row-major `b x M`.
    pub fn s_counts(&self) -> Vec<u64> {
        let mut s = vec![0; self.counts.len()];
        for m in 0..self.phases {
            let mut acc = 0;
            for j in (0..self.buffer).rev() {
                acc += self.counts[j * self.phases + m];
                s[j * self.phases + m] = acc;
            }
        }
        s
    }

    /// `s_{i,m}`: fraction of servers with at least `i` jobs and the job in
    /// service in phase `m`.
    pub fn s(&self, level: usize, phase: usize) -> f64 {
        let n: u64 = (level..=self.buffer).map(|j| self.count(j, phase)).sum();
        n as f64 / self.servers as f64
    }

    /// `s_i = sum_m s_{i,m}`.
    pub fn s_level(&self, level: usize) -> f64 {
        let n: u64 = (level..=self.buffer).map(|j| self.level_count(j)).sum();
        n as f64 / self.servers as f64
    }

    /// `sum_i s_i`, the average number of jobs per server.
    pub fn s_total(&self) -> f64 {
        self.total_jobs() as f64 / self.servers as f64
    }

    /// Checks membership of the S-view in the admissible state set.
    pub fn validate(&self) -> Result<()> {
        let busy: u64 = self.counts.iter().sum();
        if busy + self.idle != self.servers as u64 {
            return Err(Error::TooManyServers {
                busy,
                servers: self.servers,
            });
        }
        let s = self.s_counts();
        for m in 0..self.phases {
            for j in 1..self.buffer {
                if s[j * self.phases + m] > s[(j - 1) * self.phases + m] {
                    return Err(Error::NotMonotone { phase: m + 1 });
                }
            }
        }
        Ok(())
    }

    /// Non-zero cells as `(j, m, count)` triples, in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        let phases = self.phases;
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(move |(i, &c)| (i / phases + 1, i % phases + 1, c))
    }

    /// An arrival joins a server that had `level - 1` jobs with its job in
    /// service in `phase`. For `level == 1` the server was idle and `phase`
    /// must be 1.
    pub fn apply_arrival(&mut self, level: usize, phase: usize) -> Result<()> {
        if level > self.buffer {
            return Err(Error::BufferOverflow);
        }
        self.check_cell(level, phase)?;
        if level == 1 {
            if phase != 1 {
                return Err(Error::IdleArrivalPhase(phase));
            }
            if self.idle == 0 {
                return Err(Error::NoIdleServer);
            }
            self.idle -= 1;
        } else {
            let from = self.idx(level - 1, phase);
            if self.counts[from] == 0 {
                return Err(Error::EmptyCell {
                    level: level - 1,
                    phase,
                });
            }
            self.counts[from] -= 1;
        }
        let to = self.idx(level, phase);
        self.counts[to] += 1;
        Ok(())
    }

    /// A server with `level` jobs completes phase `phase` and the job leaves.
    /// The next job in line, if any, starts in phase 1.
    pub fn apply_departure(&mut self, level: usize, phase: usize) -> Result<()> {
        self.check_cell(level, phase)?;
        let from = self.idx(level, phase);
        if self.counts[from] == 0 {
            return Err(Error::EmptyCell { level, phase });
        }
        self.counts[from] -= 1;
        if level == 1 {
            self.idle += 1;
        } else {
            let to = self.idx(level - 1, 1);
            self.counts[to] += 1;
        }
        Ok(())
    }

    /// A server with `level` jobs completes phase `phase` and its job moves
    /// on to phase `phase + 1`.
    pub fn apply_phase_advance(&mut self, level: usize, phase: usize) -> Result<()> {
        self.check_cell(level, phase)?;
        if phase == self.phases {
            return Err(Error::LastPhase(phase));
        }
        let from = self.idx(level, phase);
        if self.counts[from] == 0 {
            return Err(Error::EmptyCell { level, phase });
        }
        self.counts[from] -= 1;
        self.counts[from + 1] += 1;
        Ok(())
    }
}

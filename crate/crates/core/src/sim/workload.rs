//! Synthetic request streams.
//!
//! Every stream draws from its own ChaCha8 substream (same seed, stream id =
//! stream index), so adding or reordering events never perturbs another
//! stream's trace.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;

use crate::config::{ArrivalProcess, ServerMapping, WorkloadStream};
use crate::data_plane::IoRequest;
use crate::{ServerId, BYTES_PER_MB};

/// Generator for one [`WorkloadStream`].
#[derive(Debug, Clone)]
pub struct StreamState {
    spec: WorkloadStream,
    index: usize,
    servers: Vec<ServerId>,
    rng: ChaCha8Rng,
    picker: Option<WeightedIndex<f64>>,
    gap: Option<Exp<f64>>,
    next_rr: usize,
    emitted: u64,
    start: f64,
}

/// Substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl StreamState {
    /// `servers` in config order; static weights index into it.
    pub fn new(spec: WorkloadStream, index: usize, servers: Vec<ServerId>, seed: u64) -> Self {
        let picker = match &spec.server_mapping {
            ServerMapping::StaticWeights(w) => Some(WeightedIndex::new(w.iter().copied()).expect("validated weights")),
            _ => None,
        };
        let gap = match spec.arrival_process {
            ArrivalProcess::Poisson { mean_rate_mbps } => {
                let per_second = mean_rate_mbps * BYTES_PER_MB / spec.request_size_bytes as f64;
                Some(Exp::new(per_second).expect("positive rate"))
            }
            ArrivalProcess::Deterministic { .. } => None,
        };
        Self {
            spec,
            index,
            servers,
            rng: substream(seed, index as u64),
            picker,
            gap,
            next_rr: 0,
            emitted: 0,
            start: 0.0,
        }
    }

    pub fn spec(&self) -> &WorkloadStream {
        &self.spec
    }

    /// Mean seconds between requests.
    pub fn mean_interarrival(&self) -> f64 {
        self.spec.request_size_bytes as f64 / (self.spec.arrival_process.rate_mbps() * BYTES_PER_MB)
    }

    fn draw_gap(&mut self) -> f64 {
        match &self.gap {
            Some(exp) => exp.sample(&mut self.rng),
            None => self.mean_interarrival(),
        }
    }

    /// Time of the stream's first request.
    pub fn first_arrival(&mut self) -> f64 {
        let gap = self.draw_gap();
        self.start = 0.0;
        gap
    }

    fn pick_server(&mut self) -> ServerId {
        let idx = match &self.spec.server_mapping {
            ServerMapping::RoundRobin => {
                let i = self.next_rr;
                self.next_rr = (self.next_rr + 1) % self.servers.len();
                i
            }
            ServerMapping::UniformRandom => self.rng.random_range(0..self.servers.len()),
            ServerMapping::StaticWeights(_) => self.picker.as_ref().expect("built for static weights").sample(&mut self.rng),
        };
        self.servers[idx]
    }

    /// Builds the request arriving at `now` and returns it with the time of
    /// the following request.
    pub fn next_arrival(&mut self, now: f64) -> (IoRequest, f64) {
        let target = self.pick_server();
        let request = IoRequest {
            id: ((self.index as u64) << 40) | self.emitted,
            app_id: self.spec.app_id.clone(),
            size_bytes: self.spec.request_size_bytes,
            arrival_time: now,
            source_node: self.spec.source_node,
            target_server: target,
        };
        self.emitted += 1;
        let next = match self.gap {
            // Index-based so long deterministic runs do not drift.
            None => self.start + (self.emitted + 1) as f64 * self.mean_interarrival(),
            Some(_) => now + self.draw_gap(),
        };
        (request, next)
    }
}

//! Flat parameter vector with named partitions. Partition boundaries drive
//! the per-ray-type freeze rules and the checkpoint partition table.

use std::collections::HashMap;
use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::barron::RobustLossParams;
use crate::error::{CoreError, Result};
use crate::net::NetworkConfig;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    Trunk,
    DensityHead,
    AlbedoHead,
    SeasonHead,
    SeasonClassNet,
    SolarVisBranch,
    SkyNet,
    RobustLoss,
}

impl Partition {
    pub const ALL: [Partition; 8] = [
        Partition::Trunk,
        Partition::DensityHead,
        Partition::AlbedoHead,
        Partition::SeasonHead,
        Partition::SeasonClassNet,
        Partition::SolarVisBranch,
        Partition::SkyNet,
        Partition::RobustLoss,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Partition::Trunk => "trunk",
            Partition::DensityHead => "density_head",
            Partition::AlbedoHead => "albedo_head",
            Partition::SeasonHead => "season_head",
            Partition::SeasonClassNet => "season_class_net",
            Partition::SolarVisBranch => "solar_vis_branch",
            Partition::SkyNet => "sky_net",
            Partition::RobustLoss => "robust_loss",
        }
    }

    pub fn from_name(name: &str) -> Option<Partition> {
        Partition::ALL.iter().copied().find(|p| p.name() == name)
    }
}

/// Partitions frozen while backpropagating each ray type.
pub struct FreezeSets {
    pub image_ray_frozen: Vec<Partition>,
    pub solar_ray_frozen: Vec<Partition>,
}

/// The image-ray pass freezes what exists only for solar visibility; the
/// solar-ray pass freezes everything not exclusively serving sky color or
/// solar visibility.
pub fn partition_freeze_sets() -> FreezeSets {
    FreezeSets {
        image_ray_frozen: vec![Partition::SolarVisBranch],
        solar_ray_frozen: vec![
            Partition::Trunk,
            Partition::DensityHead,
            Partition::AlbedoHead,
            Partition::SeasonHead,
            Partition::SeasonClassNet,
            Partition::RobustLoss,
        ],
    }
}

#[derive(Debug, Clone)]
pub struct TensorSpec {
    pub name: String,
    pub partition: Partition,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Hidden widths of the small fixed-wiring nets.
pub const CLASS_HIDDEN: usize = 32;
pub const SOLAR_HIDDEN: usize = 64;
pub const SKY_HIDDEN: usize = 32;

#[derive(Debug, Clone)]
pub struct Layout {
    tensors: Vec<TensorSpec>,
    index: HashMap<String, usize>,
    partition_ranges: HashMap<Partition, Range<usize>>,
    total: usize,
}

impl Layout {
    pub fn new(cfg: &NetworkConfig) -> Layout {
        let width = cfg.trunk_width;
        let pos_in = 6 * cfg.pe_levels_pos;
        let sun_in = 6 * cfg.pe_levels_sun;
        let n = cfg.n_season_classes;

        let mut tensors: Vec<TensorSpec> = Vec::new();
        let mut offset = 0usize;
        let mut push = |tensors: &mut Vec<TensorSpec>, name: String, partition, rows, cols| {
            tensors.push(TensorSpec {
                name,
                partition,
                rows,
                cols,
                offset,
            });
            offset += rows * cols;
        };

        for l in 0..cfg.trunk_depth {
            let fan_in = if l == 0 { pos_in } else { width };
            push(&mut tensors, format!("trunk.w{l}"), Partition::Trunk, fan_in, width);
            push(&mut tensors, format!("trunk.b{l}"), Partition::Trunk, 1, width);
            if cfg.batch_norm {
                push(&mut tensors, format!("trunk.gamma{l}"), Partition::Trunk, 1, width);
                push(&mut tensors, format!("trunk.beta{l}"), Partition::Trunk, 1, width);
                // running statistics ride along in the trunk partition; they
                // receive no gradient and only move on image-ray passes
                push(&mut tensors, format!("trunk.mean{l}"), Partition::Trunk, 1, width);
                push(&mut tensors, format!("trunk.var{l}"), Partition::Trunk, 1, width);
            }
        }

        push(&mut tensors, "density.w".into(), Partition::DensityHead, width, 1);
        push(&mut tensors, "density.b".into(), Partition::DensityHead, 1, 1);

        push(&mut tensors, "albedo.w".into(), Partition::AlbedoHead, width, 3);
        push(&mut tensors, "albedo.b".into(), Partition::AlbedoHead, 1, 3);

        push(&mut tensors, "season.w".into(), Partition::SeasonHead, width, 3 * n);
        push(&mut tensors, "season.b".into(), Partition::SeasonHead, 1, 3 * n);

        push(&mut tensors, "class.w1".into(), Partition::SeasonClassNet, 2, CLASS_HIDDEN);
        push(&mut tensors, "class.b1".into(), Partition::SeasonClassNet, 1, CLASS_HIDDEN);
        push(&mut tensors, "class.w2".into(), Partition::SeasonClassNet, CLASS_HIDDEN, n);
        push(&mut tensors, "class.b2".into(), Partition::SeasonClassNet, 1, n);

        let solar_in = width + sun_in;
        push(&mut tensors, "solar.w1".into(), Partition::SolarVisBranch, solar_in, SOLAR_HIDDEN);
        push(&mut tensors, "solar.b1".into(), Partition::SolarVisBranch, 1, SOLAR_HIDDEN);
        push(&mut tensors, "solar.w2".into(), Partition::SolarVisBranch, SOLAR_HIDDEN, 1);
        push(&mut tensors, "solar.b2".into(), Partition::SolarVisBranch, 1, 1);

        push(&mut tensors, "sky.w1".into(), Partition::SkyNet, sun_in, SKY_HIDDEN);
        push(&mut tensors, "sky.b1".into(), Partition::SkyNet, 1, SKY_HIDDEN);
        push(&mut tensors, "sky.w2".into(), Partition::SkyNet, SKY_HIDDEN, 3);
        push(&mut tensors, "sky.b2".into(), Partition::SkyNet, 1, 3);

        push(&mut tensors, "robust.raw".into(), Partition::RobustLoss, 1, 2);

        let total = offset;
        let mut index = HashMap::new();
        for (i, t) in tensors.iter().enumerate() {
            index.insert(t.name.clone(), i);
        }
        let mut partition_ranges = HashMap::new();
        for p in Partition::ALL {
            let mut lo = usize::MAX;
            let mut hi = 0usize;
            for t in tensors.iter().filter(|t| t.partition == p) {
                lo = lo.min(t.offset);
                hi = hi.max(t.offset + t.len());
            }
            assert!(lo < hi, "partition {} has no tensors", p.name());
            partition_ranges.insert(p, lo..hi);
        }
        Layout {
            tensors,
            index,
            partition_ranges,
            total,
        }
    }

    pub fn tensor(&self, name: &str) -> &TensorSpec {
        &self.tensors[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown tensor {name}"))]
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn partition_range(&self, p: Partition) -> Range<usize> {
        self.partition_ranges[&p].clone()
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    pub cfg: NetworkConfig,
    layout: Layout,
    data: Vec<F>,
}

impl<F: Real> ParamStore<F> {
    /// Sinusoidal-network initialization: the input layer draws from
    /// U(-1/fan_in, 1/fan_in) and is scaled by omega0 in the forward pass;
    /// hidden layers fold the frequency scale into U(+-sqrt(6/fan_in)).
    pub fn init(cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> ParamStore<F> {
        let layout = Layout::new(cfg);
        let mut data = vec![F::zero(); layout.total()];
        let specs: Vec<TensorSpec> = layout.tensors().to_vec();
        for spec in &specs {
            let slice = &mut data[spec.range()];
            let fan_in = spec.rows.max(1);
            match spec.name.as_str() {
                name if name.starts_with("trunk.w") => {
                    let first = name == "trunk.w0";
                    let limit = if first {
                        1.0 / fan_in as f64
                    } else {
                        (6.0 / fan_in as f64).sqrt()
                    };
                    fill_uniform(slice, limit, rng);
                }
                name if name.starts_with("trunk.gamma") || name.starts_with("trunk.var") => {
                    slice.fill(F::one());
                }
                name if name.starts_with("trunk.beta")
                    || name.starts_with("trunk.mean")
                    || name.starts_with("trunk.b") =>
                {
                    slice.fill(F::zero());
                }
                "class.w1" | "solar.w1" | "sky.w1" => {
                    fill_uniform(slice, (6.0 / fan_in as f64).sqrt(), rng);
                }
                "class.w2" | "solar.w2" | "sky.w2" | "density.w" | "albedo.w" | "season.w" => {
                    fill_uniform(slice, 1.0 / (fan_in as f64).sqrt(), rng);
                }
                "robust.raw" => {
                    // raw zeros squash to alpha = 1, c = 0.5
                    slice.fill(F::zero());
                }
                _ => slice.fill(F::zero()), // biases
            }
        }
        ParamStore {
            cfg: cfg.clone(),
            layout,
            data,
        }
    }

    pub fn from_vec(cfg: &NetworkConfig, data: Vec<F>) -> Result<ParamStore<F>> {
        let layout = Layout::new(cfg);
        if data.len() != layout.total() {
            return Err(CoreError::invalid(format!(
                "parameter vector has {} entries, layout expects {}",
                data.len(),
                layout.total()
            )));
        }
        Ok(ParamStore {
            cfg: cfg.clone(),
            layout,
            data,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn tensor_slice(&self, name: &str) -> &[F] {
        &self.data[self.layout.tensor(name).range()]
    }

    pub fn tensor_slice_mut(&mut self, name: &str) -> &mut [F] {
        let range = self.layout.tensor(name).range();
        &mut self.data[range]
    }

    pub fn robust_raw(&self) -> (F, F) {
        let s = self.tensor_slice("robust.raw");
        (s[0], s[1])
    }

    pub fn robust_params(&self) -> RobustLossParams<F> {
        let (a, c) = self.robust_raw();
        RobustLossParams::from_raw(a, c)
    }

    /// Zeroes `grad` over the given partitions.
    pub fn mask_partitions(&self, grad: &mut [F], frozen: &[Partition]) {
        for p in frozen {
            for g in &mut grad[self.layout.partition_range(*p)] {
                *g = F::zero();
            }
        }
    }

    pub fn convert<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            cfg: self.cfg.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|&x| G::c(x.f64c())).collect(),
        }
    }
}

fn fill_uniform<F: Real>(slice: &mut [F], limit: f64, rng: &mut ChaCha8Rng) {
    for v in slice {
        *v = F::c(rng.gen_range(-limit..limit));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn partitions_are_disjoint_and_cover_everything() {
        let cfg = NetworkConfig::default();
        let layout = Layout::new(&cfg);
        let mut covered = vec![false; layout.total()];
        for p in Partition::ALL {
            for i in layout.partition_range(p) {
                assert!(!covered[i], "index {i} covered twice");
                covered[i] = true;
            }
        }
        assert!(covered.iter().all(|&c| c), "layout leaves gaps");
    }

    #[test]
    fn freeze_sets_union_spans_all_partitions() {
        let sets = partition_freeze_sets();
        assert_eq!(sets.image_ray_frozen, vec![Partition::SolarVisBranch]);
        assert!(sets.solar_ray_frozen.contains(&Partition::Trunk));
        assert!(!sets.solar_ray_frozen.contains(&Partition::SkyNet));
        assert!(!sets.solar_ray_frozen.contains(&Partition::SolarVisBranch));

        // trainable = complement of frozen, per ray type; the union of the
        // two trainable sets must cover every partition
        let mut trainable: Vec<Partition> = Vec::new();
        for p in Partition::ALL {
            if !sets.image_ray_frozen.contains(&p) || !sets.solar_ray_frozen.contains(&p) {
                trainable.push(p);
            }
        }
        assert_eq!(trainable.len(), Partition::ALL.len());
    }

    #[test]
    fn init_respects_documented_robust_defaults() {
        let cfg = NetworkConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let store: ParamStore<f64> = ParamStore::init(&cfg, &mut rng);
        let params = store.robust_params();
        assert!((params.alpha - 1.0).abs() < 1e-12);
        assert!((params.c - 0.5).abs() < 1e-12);
    }

    #[test]
    fn masking_zeroes_only_requested_partitions() {
        let cfg = NetworkConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let store: ParamStore<f64> = ParamStore::init(&cfg, &mut rng);
        let mut grad = vec![1.0f64; store.len()];
        store.mask_partitions(&mut grad, &[Partition::SolarVisBranch]);
        let range = store.layout().partition_range(Partition::SolarVisBranch);
        for (i, g) in grad.iter().enumerate() {
            if range.contains(&i) {
                assert_eq!(*g, 0.0);
            } else {
                assert_eq!(*g, 1.0);
            }
        }
    }
}

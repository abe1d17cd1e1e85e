use std::path::Path;

use rayon::prelude::*;

use crate::harness::plot::{plot, PlotOptions};
use crate::harness::run::{run_seed, seed_dir, write_summary};
use crate::harness::{ExperimentConfig, HarnessError, RunSummary};
use crate::phasic::Variant;

/// Preset comparisons. Each varies one setting over the base config.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepSuite {
    /// Policy epochs per iteration, value epochs fixed.
    PolicySr,
    /// Auxiliary epochs.
    ValueSr,
    /// Policy iterations per auxiliary phase.
    AuxFreq,
    KlVsClip,
    SingleNet,
    /// PPO epochs per iteration.
    PpoSr,
    SharedVsSeparate,
    AuxValueSkip,
}

impl SweepSuite {
    pub const ALL: [SweepSuite; 8] = [
        SweepSuite::PolicySr,
        SweepSuite::ValueSr,
        SweepSuite::AuxFreq,
        SweepSuite::KlVsClip,
        SweepSuite::SingleNet,
        SweepSuite::PpoSr,
        SweepSuite::SharedVsSeparate,
        SweepSuite::AuxValueSkip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepSuite::PolicySr => "policy-sr",
            SweepSuite::ValueSr => "value-sr",
            SweepSuite::AuxFreq => "aux-freq",
            SweepSuite::KlVsClip => "kl-vs-clip",
            SweepSuite::SingleNet => "single-net",
            SweepSuite::PpoSr => "ppo-sr",
            SweepSuite::SharedVsSeparate => "shared-vs-separate",
            SweepSuite::AuxValueSkip => "aux-value-skip",
        }
    }

    /// One labelled config per setting of the varied parameter.
    pub fn expand(self, base: &ExperimentConfig) -> Vec<ExperimentConfig> {
        let with = |label: String, f: &dyn Fn(&mut ExperimentConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c.harness.label = Some(label);
            c.harness.output_dir = None;
            c
        };
        let variant = |v: Variant| with(v.to_string(), &|c| c.phasic.variant = v);
        match self {
            SweepSuite::PolicySr => [1, 2, 3, 6]
                .map(|e| {
                    with(format!("e_pi={e}"), &|c| {
                        c.phasic.variant = Variant::PpgDual;
                        c.phasic.e_pi = e;
                    })
                })
                .to_vec(),
            SweepSuite::ValueSr => [1, 2, 6, 9]
                .map(|e| {
                    with(format!("e_aux={e}"), &|c| {
                        c.phasic.variant = Variant::PpgDual;
                        c.phasic.e_aux = e;
                    })
                })
                .to_vec(),
            SweepSuite::AuxFreq => [2, 4, 8, 16, 32]
                .map(|n| {
                    with(format!("n_pi={n}"), &|c| {
                        c.phasic.variant = Variant::PpgDual;
                        c.phasic.n_pi = n;
                    })
                })
                .to_vec(),
            SweepSuite::KlVsClip => vec![variant(Variant::PpgDual), variant(Variant::PpgKlPenalty)],
            SweepSuite::SingleNet => vec![
                variant(Variant::PpgDual),
                variant(Variant::PpgSingleNet),
                variant(Variant::PpoShared),
            ],
            SweepSuite::PpoSr => (1..=6)
                .map(|e| {
                    with(format!("ppo_epochs={e}"), &|c| {
                        c.phasic.variant = Variant::PpoShared;
                        c.phasic.ppo_epochs = e;
                    })
                })
                .collect(),
            SweepSuite::SharedVsSeparate => vec![variant(Variant::PpoShared), variant(Variant::PpoSeparate)],
            SweepSuite::AuxValueSkip => vec![variant(Variant::PpgDual), variant(Variant::PpgNoAuxValue)],
        }
    }
}

impl std::fmt::Display for SweepSuite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SweepSuite {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepSuite::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<_> = SweepSuite::ALL.iter().map(|v| v.name()).collect();
            HarnessError::Config(format!("unknown suite `{s}`; available: {}", names.join(", ")))
        })
    }
}

/// Runs every (config, seed) pair of the suite in parallel under `dir`, one
/// subdirectory per config, then writes `dir/<suite>.svg`.
pub fn run_sweep(suite: SweepSuite, base: &ExperimentConfig, dir: &Path) -> Result<Vec<RunSummary>, HarnessError> {
    let configs = suite.expand(base);
    for c in &configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, u64)> = configs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.harness.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(i, s)| run_seed(&configs[i], s, &seed_dir(&dir.join(configs[i].label()), s)).map(|r| (i, r)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut summaries = Vec::new();
    for (i, c) in configs.iter().enumerate() {
        let seeds: Vec<_> = results.iter().filter(|(j, _)| *j == i).map(|(_, r)| r.clone()).collect();
        summaries.push(write_summary(&dir.join(c.label()), &c.label(), &seeds)?);
    }
    let dirs: Vec<_> = summaries.iter().map(|s| s.dir.clone()).collect();
    let opts = PlotOptions {
        title: Some(suite.name().to_string()),
        ..Default::default()
    };
    plot(&dirs, &dir.join(format!("{}.svg", suite.name())), &opts)?;
    Ok(summaries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_vary_one_parameter() {
        let base = ExperimentConfig::default();
        let p = SweepSuite::PolicySr.expand(&base);
        assert_eq!(p.iter().map(|c| c.phasic.e_pi).collect::<Vec<_>>(), [1, 2, 3, 6]);
        assert!(p.iter().all(|c| c.phasic.value_epochs() == 1 && c.phasic.e_aux == 6));
        let v = SweepSuite::ValueSr.expand(&base);
        assert_eq!(v.iter().map(|c| c.phasic.e_aux).collect::<Vec<_>>(), [1, 2, 6, 9]);
        let a = SweepSuite::AuxFreq.expand(&base);
        assert_eq!(a.iter().map(|c| c.phasic.n_pi).collect::<Vec<_>>(), [2, 4, 8, 16, 32]);
        let o = SweepSuite::PpoSr.expand(&base);
        assert_eq!(o.iter().map(|c| c.phasic.ppo_epochs).collect::<Vec<_>>(), [1, 2, 3, 4, 5, 6]);
        assert!(o.iter().all(|c| c.phasic.variant == Variant::PpoShared));
        for s in SweepSuite::ALL {
            let cs = s.expand(&base);
            let mut labels: Vec<_> = cs.iter().map(|c| c.label()).collect();
            labels.dedup();
            assert_eq!(labels.len(), cs.len(), "{s}");
            for c in cs {
                let mut d = c.clone();
                d.phasic = base.phasic.clone();
                d.harness = base.harness.clone();
                assert_eq!(d, base, "{s} changed more than the phasic section");
            }
        }
    }

    #[test]
    fn unknown_suite_lists_choices() {
        let e = "nope".parse::<SweepSuite>().unwrap_err();
        assert!(e.to_string().contains("aux-value-skip"));
        assert_eq!("aux-freq".parse::<SweepSuite>().unwrap(), SweepSuite::AuxFreq);
    }
}

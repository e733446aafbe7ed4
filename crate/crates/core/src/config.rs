//! Pipeline configuration: sectioned `key = value` text files over
//! desk-scale defaults.

use std::path::{Path, PathBuf};

use crate::amtl::GrlPlacement;
use crate::corpus::SyntheticSpec;
use crate::error::{AudError, Result};
use crate::fhvae::FhvaeConfig;
use crate::units::BoundaryJoin;

#[derive(Debug, Clone)]
pub struct DpgmmSettings {
    pub alpha: f64,
    pub iters: usize,
}

#[derive(Debug, Clone)]
pub struct AmtlSettings {
    pub mh_hidden: Vec<usize>,
    pub bottleneck_dim: usize,
    pub head_hidden: usize,
    pub lambda: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub context: usize,
    pub grl_placement: GrlPlacement,
}

#[derive(Debug, Clone)]
pub struct AbxSettings {
    pub max_triplets: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub corpus: SyntheticSpec,
    pub fhvae: FhvaeConfig,
    pub dpgmm: DpgmmSettings,
    pub amtl: AmtlSettings,
    pub lambda_grid: Vec<f64>,
    pub smooth: bool,
    pub boundary_join: BoundaryJoin,
    pub abx: AbxSettings,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: SyntheticSpec {
                n_phones: 10,
                n_speakers: 8,
                feat_dim: 8,
                utt_per_speaker: 4,
                dur_range: (3, 10),
                speaker_shift_scale: 10.0,
                noise_std: 0.3,
                frame_rate: 100.0,
                phones_per_utt: 10,
            },
            fhvae: FhvaeConfig {
                z1_dim: 16,
                z2_dim: 16,
                var_mu2: 100.0,
                var_z2: 1.0,
                alpha_dis: 10.0,
                seg_len: 10,
                hidden: vec![256],
                epochs: 40,
                batch_size: 32,
                lr: 2e-3,
                train_shift: 1,
                z1_dropout: 0.3,
                ..FhvaeConfig::default()
            },
            dpgmm: DpgmmSettings { alpha: 1.0, iters: 100 },
            amtl: AmtlSettings {
                mh_hidden: vec![128, 128],
                bottleneck_dim: 40,
                head_hidden: 128,
                lambda: 0.0,
                lr_start: 0.1,
                lr_end: 0.01,
                epochs: 60,
                batch_size: 32,
                context: 5,
                grl_placement: GrlPlacement::OnMh,
            },
            lambda_grid: vec![0.0, 0.02, 0.04, 0.06, 0.08, 0.10, 0.12],
            smooth: false,
            boundary_join: BoundaryJoin::Or,
            abx: AbxSettings { max_triplets: 2000 },
            out_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.fhvae.validate()?;
        if self.dpgmm.alpha <= 0.0 || self.dpgmm.iters == 0 {
            return Err(AudError::Config("dpgmm alpha/iters must be positive".into()));
        }
        if self.amtl.lambda < 0.0 || self.lambda_grid.iter().any(|&l| l < 0.0) {
            return Err(AudError::Config("lambda values must be nonnegative".into()));
        }
        if self.abx.max_triplets == 0 {
            return Err(AudError::Config("abx max_triplets must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `[section]` / `key = value` overrides on top of the current
    /// values. Blank lines and lines starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_lowercase();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                AudError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim().to_lowercase();
            let value = value.trim();
            self.apply_kv(&section, &key, value).map_err(|e| {
                AudError::Config(format!("line {}: {e}", lineno + 1))
            })?;
        }
        Ok(())
    }

    fn apply_kv(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(value: &str, what: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| AudError::Config(format!("invalid {what}: {value}")))
        }
        fn plist(value: &str, what: &str) -> Result<Vec<f64>> {
            value
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| p(s, what))
                .collect()
        }
        match (section, key) {
            ("corpus", "n_phones") => self.corpus.n_phones = p(value, "n_phones")?,
            ("corpus", "n_speakers") => self.corpus.n_speakers = p(value, "n_speakers")?,
            ("corpus", "feat_dim") => self.corpus.feat_dim = p(value, "feat_dim")?,
            ("corpus", "utt_per_speaker") => {
                self.corpus.utt_per_speaker = p(value, "utt_per_speaker")?
            }
            ("corpus", "dur_min") => self.corpus.dur_range.0 = p(value, "dur_min")?,
            ("corpus", "dur_max") => self.corpus.dur_range.1 = p(value, "dur_max")?,
            ("corpus", "speaker_shift_scale") => {
                self.corpus.speaker_shift_scale = p(value, "speaker_shift_scale")?
            }
            ("corpus", "noise_std") => self.corpus.noise_std = p(value, "noise_std")?,
            ("corpus", "frame_rate") => self.corpus.frame_rate = p(value, "frame_rate")?,
            ("corpus", "phones_per_utt") => {
                self.corpus.phones_per_utt = p(value, "phones_per_utt")?
            }
            ("fhvae", "z1_dim") => self.fhvae.z1_dim = p(value, "z1_dim")?,
            ("fhvae", "z2_dim") => self.fhvae.z2_dim = p(value, "z2_dim")?,
            ("fhvae", "var_mu2") => self.fhvae.var_mu2 = p(value, "var_mu2")?,
            ("fhvae", "var_z1") => self.fhvae.var_z1 = p(value, "var_z1")?,
            ("fhvae", "var_z2") => self.fhvae.var_z2 = p(value, "var_z2")?,
            ("fhvae", "alpha_dis") => self.fhvae.alpha_dis = p(value, "alpha_dis")?,
            ("fhvae", "seg_len") => self.fhvae.seg_len = p(value, "seg_len")?,
            ("fhvae", "hidden") => {
                self.fhvae.hidden =
                    plist(value, "hidden")?.into_iter().map(|v| v as usize).collect()
            }
            ("fhvae", "epochs") => self.fhvae.epochs = p(value, "epochs")?,
            ("fhvae", "batch_size") => self.fhvae.batch_size = p(value, "batch_size")?,
            ("fhvae", "lr") => self.fhvae.lr = p(value, "lr")?,
            ("fhvae", "train_shift") => self.fhvae.train_shift = p(value, "train_shift")?,
            ("fhvae", "z1_dropout") => self.fhvae.z1_dropout = p(value, "z1_dropout")?,
            ("dpgmm", "alpha") => self.dpgmm.alpha = p(value, "alpha")?,
            ("dpgmm", "iters") => self.dpgmm.iters = p(value, "iters")?,
            ("amtl", "mh_hidden") => {
                self.amtl.mh_hidden =
                    plist(value, "mh_hidden")?.into_iter().map(|v| v as usize).collect()
            }
            ("amtl", "bottleneck_dim") => self.amtl.bottleneck_dim = p(value, "bottleneck_dim")?,
            ("amtl", "head_hidden") => self.amtl.head_hidden = p(value, "head_hidden")?,
            ("amtl", "lambda") => self.amtl.lambda = p(value, "lambda")?,
            ("amtl", "lr_start") => self.amtl.lr_start = p(value, "lr_start")?,
            ("amtl", "lr_end") => self.amtl.lr_end = p(value, "lr_end")?,
            ("amtl", "epochs") => self.amtl.epochs = p(value, "epochs")?,
            ("amtl", "batch_size") => self.amtl.batch_size = p(value, "batch_size")?,
            ("amtl", "context") => self.amtl.context = p(value, "context")?,
            ("amtl", "grl_placement") => {
                self.amtl.grl_placement = match value {
                    "on_mh" => GrlPlacement::OnMh,
                    "on_mp_ffl" => GrlPlacement::OnMpFfl,
                    other => {
                        return Err(AudError::Config(format!(
                            "unknown grl_placement {other}"
                        )))
                    }
                }
            }
            ("amtl", "lambda_grid") => self.lambda_grid = plist(value, "lambda_grid")?,
            ("units", "smooth") => self.smooth = p(value, "smooth")?,
            ("units", "boundary_join") => {
                self.boundary_join = match value {
                    "or" => BoundaryJoin::Or,
                    "xor" => BoundaryJoin::Xor,
                    other => {
                        return Err(AudError::Config(format!("unknown boundary_join {other}")))
                    }
                }
            }
            ("abx", "max_triplets") => self.abx.max_triplets = p(value, "max_triplets")?,
            ("pipeline", "out_dir") => self.out_dir = PathBuf::from(value),
            ("pipeline", "seed") => self.seed = p(value, "seed")?,
            _ => {
                return Err(AudError::Config(format!("unknown key [{section}] {key}")));
            }
        }
        Ok(())
    }

    /// Canonical text rendering; used for digests, so the format is stable.
    pub fn canonical_text(&self) -> String {
        let c = &self.corpus;
        let f = &self.fhvae;
        let a = &self.amtl;
        let join_usize =
            |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let join_f64 =
            |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        format!(
            "[corpus]\nn_phones = {}\nn_speakers = {}\nfeat_dim = {}\nutt_per_speaker = {}\n\
             dur_min = {}\ndur_max = {}\nspeaker_shift_scale = {:?}\nnoise_std = {:?}\n\
             frame_rate = {:?}\nphones_per_utt = {}\n\
             [fhvae]\nz1_dim = {}\nz2_dim = {}\nvar_mu2 = {:?}\nvar_z1 = {:?}\nvar_z2 = {:?}\n\
             alpha_dis = {:?}\nseg_len = {}\nhidden = {}\nepochs = {}\nbatch_size = {}\n\
             lr = {:?}\ntrain_shift = {}\nz1_dropout = {:?}\n\
             [dpgmm]\nalpha = {:?}\niters = {}\n\
             [amtl]\nmh_hidden = {}\nbottleneck_dim = {}\nhead_hidden = {}\nlambda = {:?}\n\
             lr_start = {:?}\nlr_end = {:?}\nepochs = {}\nbatch_size = {}\ncontext = {}\n\
             grl_placement = {}\nlambda_grid = {}\n\
             [units]\nsmooth = {}\nboundary_join = {}\n\
             [abx]\nmax_triplets = {}\n\
             [pipeline]\nseed = {}\n",
            c.n_phones,
            c.n_speakers,
            c.feat_dim,
            c.utt_per_speaker,
            c.dur_range.0,
            c.dur_range.1,
            c.speaker_shift_scale,
            c.noise_std,
            c.frame_rate,
            c.phones_per_utt,
            f.z1_dim,
            f.z2_dim,
            f.var_mu2,
            f.var_z1,
            f.var_z2,
            f.alpha_dis,
            f.seg_len,
            join_usize(&f.hidden),
            f.epochs,
            f.batch_size,
            f.lr,
            f.train_shift,
            f.z1_dropout,
            self.dpgmm.alpha,
            self.dpgmm.iters,
            join_usize(&a.mh_hidden),
            a.bottleneck_dim,
            a.head_hidden,
            a.lambda,
            a.lr_start,
            a.lr_end,
            a.epochs,
            a.batch_size,
            a.context,
            match a.grl_placement {
                GrlPlacement::OnMh => "on_mh",
                GrlPlacement::OnMpFfl => "on_mp_ffl",
            },
            join_f64(&self.lambda_grid),
            self.smooth,
            match self.boundary_join {
                BoundaryJoin::Or => "or",
                BoundaryJoin::Xor => "xor",
            },
            self.abx.max_triplets,
            self.seed,
        )
    }
}

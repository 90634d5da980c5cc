//! Model kinds, parameter groups, and the flat `key = value` training config.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Iwgan,
    Aae,
    Arae,
    SoftGan,
    LatextI,
    LatextII,
    LatextIII,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Iwgan,
        ModelKind::Aae,
        ModelKind::Arae,
        ModelKind::SoftGan,
        ModelKind::LatextI,
        ModelKind::LatextII,
        ModelKind::LatextIII,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Iwgan => "iwgan",
            ModelKind::Aae => "aae",
            ModelKind::Arae => "arae",
            ModelKind::SoftGan => "soft_gan",
            ModelKind::LatextI => "latext_i",
            ModelKind::LatextII => "latext_ii",
            ModelKind::LatextIII => "latext_iii",
        }
    }

    /// Parameter sets this kind owns.
    pub fn groups(self) -> &'static [Group] {
        use Group::*;
        match self {
            ModelKind::Iwgan => &[TextGenerator, TextCritic],
            ModelKind::Aae => &[Encoder, Decoder, CodeCritic],
            ModelKind::Arae => &[Encoder, Decoder, CodeGenerator, CodeCritic],
            ModelKind::SoftGan => &[Encoder, Decoder, TextCritic],
            ModelKind::LatextI => &[Encoder, Decoder, TextCritic, CodeCritic],
            ModelKind::LatextII => &[Encoder, Decoder, CodeGenerator, TextCritic, CodeCritic],
            ModelKind::LatextIII => &[Encoder, Decoder, CodeGenerator, JointCritic],
        }
    }

    pub fn owns(self, group: Group) -> bool {
        self.groups().contains(&group)
    }

    pub fn has_autoencoder(self) -> bool {
        self.owns(Group::Encoder)
    }

    /// Kinds whose prior sample `z` is used directly in code space: it is fed
    /// to the decoder or compared against encoder codes.
    pub fn noise_is_code(self) -> bool {
        matches!(self, ModelKind::Aae | ModelKind::SoftGan | ModelKind::LatextI)
    }

    pub fn normalizes_noise_by_default(self) -> bool {
        self.noise_is_code()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                let valid: Vec<&str> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!(
                    "unknown model kind {s:?}; valid kinds: {}",
                    valid.join(", ")
                ))
            })
    }
}

/// Independently updated parameter set. Each maps to a name prefix in the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// φ
    Encoder,
    /// ψ
    Decoder,
    /// θ, noise → code
    CodeGenerator,
    /// θ of the IWGAN baseline, noise → soft text
    TextGenerator,
    /// w_t
    TextCritic,
    /// w_c
    CodeCritic,
    /// w_{t+c}
    JointCritic,
}

impl Group {
    pub const ALL: [Group; 7] = [
        Group::Encoder,
        Group::Decoder,
        Group::CodeGenerator,
        Group::TextGenerator,
        Group::TextCritic,
        Group::CodeCritic,
        Group::JointCritic,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            Group::Encoder => "enc.",
            Group::Decoder => "dec.",
            Group::CodeGenerator => "gen.",
            Group::TextGenerator => "tgen.",
            Group::TextCritic => "crit_t.",
            Group::CodeCritic => "crit_c.",
            Group::JointCritic => "crit_tc.",
        }
    }

    pub fn contains(self, param: &str) -> bool {
        param.starts_with(self.prefix())
    }

    pub fn of(param: &str) -> Option<Group> {
        Group::ALL.into_iter().find(|g| g.contains(param))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub kind: ModelKind,
    pub seed: u64,
    pub iterations: u64,
    pub batch_size: usize,
    /// Critic updates per generator update.
    pub critic_iters: usize,
    pub gp_lambda: f64,
    pub max_len: usize,
    pub vocab_size: usize,
    pub lowercase: bool,

    /// LSTM width, which is also the code dimension.
    pub hidden: usize,
    pub noise_dim: usize,
    /// `None` means the kind's default.
    pub normalize_noise: Option<bool>,
    pub res_blocks: usize,
    /// Feature maps of the convolutional critic and IWGAN generator.
    pub channels: usize,
    pub kernel: usize,
    pub code_critic_hidden: usize,
    pub generator_hidden: usize,

    pub ae_lr: f64,
    pub ae_beta1: f64,
    pub ae_beta2: f64,
    pub gan_lr: f64,
    pub gan_beta1: f64,
    pub gan_beta2: f64,

    pub noise_std0: f64,
    pub noise_decay: f64,
    pub noise_decay_every: u64,

    /// Whether the text-critic loss also updates the decoder once per iteration.
    pub decoder_in_text_critic: bool,

    pub eval_every: u64,
    pub eval_samples: usize,
    pub checkpoint_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::SoftGan,
            seed: 1,
            iterations: 200_000,
            batch_size: 64,
            critic_iters: 5,
            gp_lambda: 10.0,
            max_len: 15,
            vocab_size: 10_000,
            lowercase: true,
            hidden: 512,
            noise_dim: 100,
            normalize_noise: None,
            res_blocks: 5,
            channels: 512,
            kernel: 5,
            code_critic_hidden: 512,
            generator_hidden: 512,
            ae_lr: 1e-3,
            ae_beta1: 0.9,
            ae_beta2: 0.999,
            gan_lr: 1e-4,
            gan_beta1: 0.5,
            gan_beta2: 0.9,
            noise_std0: 0.2,
            noise_decay: 0.995,
            noise_decay_every: 100,
            decoder_in_text_critic: true,
            eval_every: 2000,
            eval_samples: 640,
            checkpoint_every: 10_000,
        }
    }
}

macro_rules! config_keys {
    ($($key:ident),* $(,)?) => {
        impl TrainingConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            fn set_field(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => {
                        self.$key = parse_value(key, value)?;
                    })*
                    _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
                }
                Ok(())
            }

            fn fields(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($key), self.$key.to_config_string())),*]
            }
        }
    };
}

config_keys!(
    kind,
    seed,
    iterations,
    batch_size,
    critic_iters,
    gp_lambda,
    max_len,
    vocab_size,
    lowercase,
    hidden,
    noise_dim,
    normalize_noise,
    res_blocks,
    channels,
    kernel,
    code_critic_hidden,
    generator_hidden,
    ae_lr,
    ae_beta1,
    ae_beta2,
    gan_lr,
    gan_beta1,
    gan_beta2,
    noise_std0,
    noise_decay,
    noise_decay_every,
    decoder_in_text_critic,
    eval_every,
    eval_samples,
    checkpoint_every,
);

trait ConfigValue: Sized {
    fn parse_config(s: &str) -> Option<Self>;
    fn to_config_string(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_config(s: &str) -> Option<Self> {
                s.parse().ok()
            }
            fn to_config_string(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(u64, usize, bool);

impl ConfigValue for f64 {
    fn parse_config(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn to_config_string(&self) -> String {
        // Debug prints the shortest representation that round-trips.
        format!("{self:?}")
    }
}

impl ConfigValue for ModelKind {
    fn parse_config(s: &str) -> Option<Self> {
        s.parse().ok()
    }
    fn to_config_string(&self) -> String {
        self.name().to_owned()
    }
}

impl ConfigValue for Option<bool> {
    fn parse_config(s: &str) -> Option<Self> {
        match s {
            "auto" => Some(None),
            _ => s.parse().ok().map(Some),
        }
    }
    fn to_config_string(&self) -> String {
        self.map_or_else(|| "auto".to_owned(), |b| b.to_string())
    }
}

fn parse_value<T: ConfigValue>(key: &str, value: &str) -> Result<T> {
    if key == "kind" {
        // Surface the list of valid kinds.
        value.parse::<ModelKind>()?;
    }
    T::parse_config(value).ok_or_else(|| Error::Config(format!("bad value {value:?} for {key}")))
}

impl TrainingConfig {
    /// Small networks on the toy grammar: vocabulary 20, sentences of at most 8 ids.
    pub fn desk(kind: ModelKind) -> Self {
        Self {
            kind,
            iterations: 5000,
            max_len: 8,
            vocab_size: 20,
            hidden: 64,
            noise_dim: 32,
            res_blocks: 2,
            channels: 32,
            kernel: 5,
            code_critic_hidden: 64,
            generator_hidden: 64,
            eval_every: 1000,
            eval_samples: 256,
            checkpoint_every: 1000,
            noise_std0: 0.05,
            ..Self::default()
        }
    }

    /// Sets one key from its string form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_field(key.trim(), value.trim())
    }

    /// Applies `key = value` lines over the current values. `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_kv(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&text)
    }

    pub fn to_kv(&self) -> String {
        self.fields()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.critic_iters < 1 {
            return fail("critic_iters must be at least 1");
        }
        if !(self.gp_lambda >= 0.0) {
            return fail("gp_lambda must be non-negative");
        }
        if self.batch_size == 0 || self.max_len == 0 || self.hidden == 0 || self.channels == 0 {
            return fail("batch_size, max_len, hidden and channels must be positive");
        }
        if self.vocab_size < 5 {
            return fail("vocab_size must be at least 5");
        }
        if self.kernel % 2 == 0 {
            return fail("kernel width must be odd");
        }
        if !(self.noise_decay > 0.0 && self.noise_decay <= 1.0) || self.noise_decay_every == 0 {
            return fail("noise decay must be in (0, 1] with a positive period");
        }
        if self.noise_std0 < 0.0 {
            return fail("noise_std0 must be non-negative");
        }
        Ok(())
    }

    /// Width of `z`. Kinds that use `z` as a code need it to match the code width.
    pub fn effective_noise_dim(&self) -> usize {
        if self.kind.noise_is_code() {
            self.hidden
        } else {
            self.noise_dim
        }
    }

    pub fn normalize_noise(&self) -> bool {
        self.normalize_noise
            .unwrap_or_else(|| self.kind.normalizes_noise_by_default())
    }

    /// `σ₀ · γ^⌊i / period⌋`
    pub fn noise_std(&self, iteration: u64) -> f64 {
        noise_std(iteration, self.noise_std0, self.noise_decay, self.noise_decay_every)
    }
}

/// Exponentially decaying code-noise level.
pub fn noise_std(iteration: u64, sigma0: f64, decay: f64, every: u64) -> f64 {
    let periods = (iteration / every.max(1)) as i32;
    sigma0 * decay.powi(periods)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_parse_and_list_valid_names() {
        assert_eq!("latext_iii".parse::<ModelKind>().unwrap(), ModelKind::LatextIII);
        assert_eq!("Soft-GAN".parse::<ModelKind>().unwrap(), ModelKind::SoftGan);
        let err = "foo".parse::<ModelKind>().unwrap_err().to_string();
        assert!(err.contains("soft_gan") && err.contains("iwgan"), "{err}");
    }

    #[test]
    fn groups_are_declared_per_kind() {
        assert_eq!(
            ModelKind::LatextII.groups(),
            &[Group::Encoder, Group::Decoder, Group::CodeGenerator, Group::TextCritic, Group::CodeCritic]
        );
        assert_eq!(ModelKind::SoftGan.groups(), &[Group::Encoder, Group::Decoder, Group::TextCritic]);
        assert!(!ModelKind::Iwgan.has_autoencoder());
    }

    #[test]
    fn kv_round_trip() {
        let mut c = TrainingConfig::desk(ModelKind::LatextI);
        c.gp_lambda = 0.1 + 0.2;
        c.normalize_noise = Some(false);
        let back = TrainingConfig::from_kv(&c.to_kv()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn kv_rejects_bad_lines() {
        assert!(TrainingConfig::from_kv("nonsense").is_err());
        assert!(TrainingConfig::from_kv("wat = 3").is_err());
        assert!(TrainingConfig::from_kv("critic_iters = 0").is_err());
        assert!(TrainingConfig::from_kv("gp_lambda = -1").is_err());
        let c = TrainingConfig::from_kv("# comment\nkind = arae  # trailing\n\n").unwrap();
        assert_eq!(c.kind, ModelKind::Arae);
    }

    #[test]
    fn noise_schedule() {
        let c = TrainingConfig::default();
        assert_eq!(c.noise_std(0), 0.2);
        assert!((c.noise_std(100) - 0.199).abs() < 1e-15);
        assert_eq!(c.noise_std(99), 0.2);
        let mut prev = f64::INFINITY;
        for i in (0..100_000).step_by(37) {
            let s = c.noise_std(i);
            assert!(s <= prev);
            prev = s;
        }
    }

    #[test]
    fn noise_dim_follows_kind() {
        let mut c = TrainingConfig::default();
        c.kind = ModelKind::SoftGan;
        assert_eq!(c.effective_noise_dim(), 512);
        assert!(c.normalize_noise());
        c.kind = ModelKind::LatextII;
        assert_eq!(c.effective_noise_dim(), 100);
        assert!(!c.normalize_noise());
    }
}

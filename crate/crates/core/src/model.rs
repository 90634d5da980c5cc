use std::collections::BTreeMap;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autoencoder::Autoencoder;
use crate::config::{Group, ModelKind, TrainingConfig};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::gan::{CodeCritic, CodeGenerator, JointCritic, TextCritic, TextGenerator};
use crate::nn::ParamStore;
use crate::optim::{Adam, AdamConfig};

/// Layer layout for every network a kind may own. Only owned ones get parameters.
#[derive(Debug, Clone)]
pub struct Networks {
    pub ae: Autoencoder,
    pub code_gen: CodeGenerator,
    pub text_gen: TextGenerator,
    pub text_critic: TextCritic,
    pub code_critic: CodeCritic,
    pub joint_critic: JointCritic,
}

impl Networks {
    pub fn new(c: &TrainingConfig, vocab_size: usize) -> Self {
        let code_dim = c.hidden;
        let noise_dim = c.effective_noise_dim();
        Self {
            ae: Autoencoder::new(vocab_size, c.hidden, c.max_len),
            code_gen: CodeGenerator::new(noise_dim, c.generator_hidden, c.res_blocks, code_dim),
            text_gen: TextGenerator::new(noise_dim, c.channels, c.res_blocks, c.kernel, c.max_len, vocab_size),
            text_critic: TextCritic::new(vocab_size, c.channels, c.res_blocks, c.kernel, c.max_len),
            code_critic: CodeCritic::new(code_dim, c.code_critic_hidden),
            joint_critic: JointCritic::new(vocab_size, c.channels, c.res_blocks, c.kernel, c.max_len, code_dim),
        }
    }

    pub fn init(&self, kind: ModelKind, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for group in kind.groups() {
            match group {
                Group::Encoder => self.ae.encoder.init(store, rng),
                Group::Decoder => {
                    self.ae.decoder.init(store, rng);
                    self.ae.output.init(store, rng);
                }
                Group::CodeGenerator => self.code_gen.init(store, rng),
                Group::TextGenerator => self.text_gen.init(store, rng),
                Group::TextCritic => self.text_critic.init(store, rng),
                Group::CodeCritic => self.code_critic.init(store, rng),
                Group::JointCritic => self.joint_critic.init(store, rng),
            }
        }
    }
}

/// Optimizer slots. Each is a separate Adam state.
pub const OPTIMIZERS: [&str; 6] = ["ae", "critic_t", "critic_c", "critic_tc", "critic_side", "gen"];

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub config: TrainingConfig,
    pub vocab: Vocabulary,
    pub nets: Networks,
    pub params: ParamStore,
    pub optimizers: BTreeMap<String, Adam>,
    pub iteration: u64,
    pub rng: ChaCha8Rng,
}

impl ModelState {
    pub fn new(config: TrainingConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        if vocab.len() > config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} entries but vocab_size is {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let nets = Networks::new(&config, vocab.len());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        nets.init(config.kind, &mut params, &mut rng);
        let optimizers = fresh_optimizers(&config);
        Ok(Self {
            config,
            vocab,
            nets,
            params,
            optimizers,
            iteration: 0,
            rng,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn optimizer(&mut self, name: &str) -> &mut Adam {
        self.optimizers
            .get_mut(name)
            .unwrap_or_else(|| panic!("no optimizer {name:?}"))
    }

    /// Digest of one parameter group; changes iff any of its bits change.
    pub fn group_digest(&self, group: Group) -> String {
        self.params.digest(|n| group.contains(n))
    }
}

pub(crate) fn fresh_optimizers(c: &TrainingConfig) -> BTreeMap<String, Adam> {
    let ae = AdamConfig::new(c.ae_lr, c.ae_beta1, c.ae_beta2);
    let gan = AdamConfig::new(c.gan_lr, c.gan_beta1, c.gan_beta2);
    OPTIMIZERS
        .iter()
        .map(|&name| {
            let cfg = if name == "ae" { ae } else { gan };
            (name.to_owned(), Adam::new(cfg))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        let words: Vec<String> = crate::toy::words().into_iter().map(str::to_owned).collect();
        Vocabulary::build(&[words], 20).unwrap()
    }

    #[test]
    fn each_kind_initializes_exactly_its_groups() {
        for kind in ModelKind::ALL {
            let mut c = TrainingConfig::desk(kind);
            c.hidden = 8;
            c.channels = 4;
            c.res_blocks = 1;
            let state = ModelState::new(c, vocab()).unwrap();
            for g in Group::ALL {
                let n = state.params.count(|p| g.contains(p));
                assert_eq!(n > 0, kind.owns(g), "{kind} {g:?}");
            }
            assert!(state.params.names().all(|n| Group::of(n).is_some()));
        }
    }

    #[test]
    fn vocab_larger_than_config_is_rejected() {
        let mut c = TrainingConfig::desk(ModelKind::SoftGan);
        c.vocab_size = 10;
        assert!(ModelState::new(c, vocab()).is_err());
    }
}

mod common;

use autodiff::Var;
use common::{tiny_config, tiny_state, toy_data};
use latext::gradcheck::{check_step, max_error};
use latext::autoencoder::SoftText;
use latext::config::Group;
use latext::gan::{gradient_penalty, sample_noise_seeded, TextCritic};
use latext::nn::{ParamStore, Scope};
use latext::optim::{Adam, AdamConfig};
use latext::training::{step_loss, synth_graph, StepKind};
use latext::{ModelKind, ModelState};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_loss_gradient_matches_finite_differences() {
    for kind in ModelKind::ALL {
        let (mut state, corpus) = tiny_state(kind);
        let params = state.params.len();
        let scalars: usize = state.params.iter().map(|(_, m)| m.len()).sum();
        assert!(scalars <= 10_000, "{kind}: {scalars} parameters in {params} tensors");
        let inp = state.draw_inputs(&corpus).unwrap();
        for (i, (step, last)) in StepKind::all_for(kind).into_iter().enumerate() {
            let probes = check_step(&state, step, last, &inp, 3, i as u64);
            assert!(!probes.is_empty(), "{kind} {step} trains nothing");
            let err = max_error(&probes);
            assert!(err < 1e-3, "{kind} {step} last={last}: relative error {err:e}");
        }
    }
}

#[test]
fn steps_touch_only_their_declared_groups() {
    for kind in ModelKind::ALL {
        let (state, corpus) = tiny_state(kind);
        for (step, last) in StepKind::all_for(kind) {
            let mut s = state.clone();
            let inp = s.draw_inputs(&corpus).unwrap();
            let before: Vec<String> = Group::ALL.iter().map(|&g| s.group_digest(g)).collect();
            if step == StepKind::Ae {
                s.ae_step(&inp.x).unwrap();
            } else {
                s.run_step(step, &inp, last).unwrap();
            }
            let declared = step.groups(&s.config, last);
            for (g, b) in Group::ALL.iter().zip(&before) {
                let changed = s.group_digest(*g) != *b;
                assert_eq!(changed, declared.contains(g), "{kind} {step} last={last} {g:?}");
            }
        }
    }
}

#[test]
fn step_methods_reject_kinds_without_that_critic() {
    let (mut s, corpus) = tiny_state(ModelKind::Aae);
    let inp = s.draw_inputs(&corpus).unwrap();
    assert!(s.critic_text_step(&inp, true).is_err());
    assert!(s.critic_joint_step(&inp, true).is_err());
    assert!(s.critic_code_step_arae(&inp, true).is_err());
    assert!(s.critic_code_step_aae(&inp).is_ok());
}

#[test]
fn schedule_runs_ae_then_k_critics_then_generator() {
    for kind in ModelKind::ALL {
        let (mut s, corpus) = tiny_state(kind);
        let k = s.config.critic_iters;
        let r = s.train_iteration(&corpus).unwrap();
        let mut expected = Vec::new();
        if kind.has_autoencoder() {
            expected.push(StepKind::Ae);
        }
        for &c in StepKind::critics_of(kind) {
            expected.extend(std::iter::repeat_n(c, k));
        }
        expected.push(StepKind::Generator);
        assert_eq!(r.trace, expected, "{kind}");
        assert_eq!(r.iteration, 1);
        assert!(r.all_finite());
    }
}

/// Adam step counts reveal how often each group was updated by each optimizer.
#[test]
fn autoencoder_side_of_critic_losses_is_updated_once_per_iteration() {
    let cases = [
        (ModelKind::SoftGan, vec!["dec."]),
        (ModelKind::LatextI, vec!["dec."]),
        (ModelKind::LatextII, vec!["enc.", "dec."]),
        (ModelKind::Arae, vec!["enc."]),
        (ModelKind::LatextIII, vec!["enc.", "dec."]),
    ];
    for (kind, prefixes) in cases {
        let (mut s, corpus) = tiny_state(kind);
        let k = s.config.critic_iters as u64;
        for _ in 0..3 {
            s.train_iteration(&corpus).unwrap();
        }
        let side = &s.optimizers["critic_side"].state;
        for p in &prefixes {
            let steps: Vec<u64> = side.iter().filter(|(n, _)| n.starts_with(p)).map(|(_, m)| m.t).collect();
            assert!(!steps.is_empty(), "{kind}: no {p} side updates");
            assert!(steps.iter().all(|&t| t == 3), "{kind} {p}: {steps:?}");
        }
        assert!(side.keys().all(|n| prefixes.iter().any(|p| n.starts_with(p))), "{kind}");
        for critic in ["critic_t", "critic_c", "critic_tc"] {
            for m in s.optimizers[critic].state.values() {
                assert_eq!(m.t, 3 * k, "{kind} {critic}");
            }
        }
    }
    let (mut s, corpus) = tiny_state(ModelKind::Aae);
    s.train_iteration(&corpus).unwrap();
    assert!(s.optimizers["critic_side"].state.is_empty());
}

#[test]
fn decoder_term_in_text_critic_can_be_disabled() {
    let mut c = tiny_config(ModelKind::SoftGan);
    c.decoder_in_text_critic = false;
    assert_eq!(StepKind::CriticText.groups(&c, true), vec![Group::TextCritic]);
    let (vocab, corpus) = toy_data(50, c.max_len, 3);
    let mut s = ModelState::new(c, vocab).unwrap();
    s.train_iteration(&corpus).unwrap();
    assert!(s.optimizers["critic_side"].state.is_empty());
}

fn critic_scores_text(s: &ModelState, store: &ParamStore, text: &SoftText) -> f64 {
    let v = s.nets.text_critic.score(store, text).unwrap();
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn critic_losses_equal_their_independent_composition() {
    for kind in ModelKind::ALL {
        let (mut s, corpus) = tiny_state(kind);
        let inp = s.draw_inputs(&corpus).unwrap();
        let frozen = Scope::frozen(&s.params);
        let lambda = s.config.gp_lambda;
        let (soft, code) = if kind.has_autoencoder() {
            let code = s.nets.ae.encode_graph(&frozen, &inp.x);
            (s.nets.ae.decode_soft_graph(&frozen, &code), code)
        } else {
            (Vec::new(), Var::scalar(0.0))
        };
        let z = Var::constant(inp.z.clone());
        for &critic in StepKind::critics_of(kind) {
            let loss = step_loss(critic, &s.nets, &s.config, &frozen, &inp).unwrap();
            let expected = match critic {
                StepKind::CriticText => {
                    let real = if kind == ModelKind::Iwgan {
                        inp.x.steps().into_iter().map(Var::constant).collect()
                    } else {
                        soft.clone()
                    };
                    let (fake, _) = synth_graph(&s.nets, kind, &frozen, &z).unwrap();
                    let gp = gradient_penalty(|p| s.nets.text_critic.forward(&frozen, p), &real, &fake, &inp.alpha, lambda)
                        .unwrap()
                        .item();
                    -critic_scores_text(&s, &s.params, &SoftText::from_vars(&real))
                        + critic_scores_text(&s, &s.params, &SoftText::from_vars(&fake))
                        + gp
                }
                StepKind::CriticCodeAae => {
                    let f = |v: &Array2<f64>| mean(&s.nets.code_critic.score(&s.params, v).unwrap());
                    let gp = gradient_penalty(|p| s.nets.code_critic.forward(&frozen, &p[0]), &[z.clone()], &[code.clone()], &inp.alpha, lambda)
                        .unwrap()
                        .item();
                    f(code.value()) - f(&inp.z) + gp
                }
                StepKind::CriticCodeArae => {
                    let f = |v: &Array2<f64>| mean(&s.nets.code_critic.score(&s.params, v).unwrap());
                    let synth = s.nets.code_gen.forward(&frozen, &z);
                    let gp = gradient_penalty(|p| s.nets.code_critic.forward(&frozen, &p[0]), &[code.clone()], &[synth.clone()], &inp.alpha, lambda)
                        .unwrap()
                        .item();
                    -f(code.value()) + f(synth.value()) + gp
                }
                StepKind::CriticJoint => {
                    let (fake, synth) = synth_graph(&s.nets, kind, &frozen, &z).unwrap();
                    let synth = synth.unwrap();
                    let jc = &s.nets.joint_critic;
                    let score = |t: &[Var], c: &Var| {
                        mean(&jc.score(&s.params, &SoftText::from_vars(t), c.value()).unwrap())
                    };
                    let real: Vec<Var> = soft.iter().cloned().chain([code.clone()]).collect();
                    let fk: Vec<Var> = fake.iter().cloned().chain([synth.clone()]).collect();
                    let gp = gradient_penalty(|p| jc.forward_packed(&frozen, p), &real, &fk, &inp.alpha, lambda)
                        .unwrap()
                        .item();
                    -score(&soft, &code) + score(&fake, &synth) + gp
                }
                _ => unreachable!(),
            };
            assert!((loss.item() - expected).abs() < 1e-6, "{kind} {critic}: {} vs {expected}", loss.item());
            let sum: f64 = -loss.terms["real"] + loss.terms["fake"] + loss.terms["penalty"];
            assert!((loss.item() - sum).abs() < 1e-9);
        }
    }
}

#[test]
fn generator_loss_mirrors_critic_loss_without_penalty() {
    for kind in [ModelKind::Iwgan, ModelKind::SoftGan, ModelKind::Aae, ModelKind::Arae, ModelKind::LatextIII] {
        let (mut s, corpus) = tiny_state(kind);
        let inp = s.draw_inputs(&corpus).unwrap();
        let frozen = Scope::frozen(&s.params);
        let critic = StepKind::critics_of(kind)[0];
        let c = step_loss(critic, &s.nets, &s.config, &frozen, &inp).unwrap();
        let g = step_loss(StepKind::Generator, &s.nets, &s.config, &frozen, &inp).unwrap();
        let without_gp = c.item() - c.terms["penalty"];
        assert!((g.item() + without_gp).abs() < 1e-9, "{kind}: {} vs {}", g.item(), -without_gp);
        let sum: f64 = g.terms.values().sum();
        assert!((g.item() - sum).abs() < 1e-9);
    }
}

#[test]
fn two_critic_generator_losses_add_both_terms() {
    for kind in [ModelKind::LatextI, ModelKind::LatextII] {
        let (mut s, corpus) = tiny_state(kind);
        let inp = s.draw_inputs(&corpus).unwrap();
        let frozen = Scope::frozen(&s.params);
        let g = step_loss(StepKind::Generator, &s.nets, &s.config, &frozen, &inp).unwrap();
        let mut expected = 0.0;
        for &critic in StepKind::critics_of(kind) {
            let c = step_loss(critic, &s.nets, &s.config, &frozen, &inp).unwrap();
            expected -= c.item() - c.terms["penalty"];
        }
        assert!((g.item() - expected).abs() < 1e-9, "{kind}");
    }
}

fn zero_group(s: &mut ModelState, group: Group) {
    let names: Vec<String> = s.params.names().filter(|n| group.contains(n)).map(str::to_owned).collect();
    for n in names {
        s.params.get_mut(&n).unwrap().fill(0.0);
    }
}

#[test]
fn zero_joint_critic_loss_is_lambda() {
    let (mut s, corpus) = tiny_state(ModelKind::LatextIII);
    zero_group(&mut s, Group::JointCritic);
    let inp = s.draw_inputs(&corpus).unwrap();
    let l = step_loss(StepKind::CriticJoint, &s.nets, &s.config, &Scope::frozen(&s.params), &inp).unwrap();
    assert!((l.item() - s.config.gp_lambda).abs() < 1e-6, "{}", l.item());
}

#[test]
fn zero_text_critic_on_identical_samples_leaves_only_the_penalty() {
    let (mut s, corpus) = tiny_state(ModelKind::SoftGan);
    zero_group(&mut s, Group::TextCritic);
    let mut inp = s.draw_inputs(&corpus).unwrap();
    let frozen = Scope::frozen(&s.params);
    // Fakes decoded from the real codes coincide with the soft-text reals.
    inp.z = s.nets.ae.encode_graph(&frozen, &inp.x).value().clone();
    let l = step_loss(StepKind::CriticText, &s.nets, &s.config, &frozen, &inp).unwrap();
    assert_eq!(l.terms["real"] - l.terms["fake"], 0.0);
    assert!((l.item() - l.terms["penalty"]).abs() < 1e-12);
}

#[test]
fn zero_code_critic_on_matching_codes_has_no_gap() {
    let (mut s, corpus) = tiny_state(ModelKind::LatextI);
    zero_group(&mut s, Group::CodeCritic);
    let mut inp = s.draw_inputs(&corpus).unwrap();
    let frozen = Scope::frozen(&s.params);
    inp.z = s.nets.ae.encode_graph(&frozen, &inp.x).value().clone();
    let l = step_loss(StepKind::CriticCodeAae, &s.nets, &s.config, &frozen, &inp).unwrap();
    assert_eq!(l.terms["real"] - l.terms["fake"], 0.0);
}

#[test]
fn joint_critic_pairing_matters() {
    let (mut s, corpus) = tiny_state(ModelKind::LatextIII);
    let inp = s.draw_inputs(&corpus).unwrap();
    let frozen = Scope::frozen(&s.params);
    let code = s.nets.ae.encode_graph(&frozen, &inp.x).value().clone();
    let soft = SoftText::from_vars(&s.nets.ae.decode_soft_graph(&frozen, &Var::constant(code.clone())));
    let mut swapped = code.clone();
    for j in 0..code.ncols() {
        swapped.swap((0, j), (1, j));
    }
    let a = s.nets.joint_critic.score(&s.params, &soft, &code).unwrap();
    let b = s.nets.joint_critic.score(&s.params, &soft, &swapped).unwrap();
    assert_ne!(a[0], b[0]);
    assert_ne!(a[1], b[1]);
}

#[test]
fn text_critic_separates_linearly_separable_soft_text() {
    let (v, t, b) = (6, 4, 16);
    let critic = TextCritic::new(v, 4, 1, 3, t);
    let mut store = ParamStore::new();
    critic.init(&mut store, &mut ChaCha8Rng::seed_from_u64(2));
    let mut adam = Adam::new(AdamConfig::new(1e-3, 0.5, 0.9));
    let peaked = |hot: usize| -> Vec<Array2<f64>> {
        let row = |j: usize| if j == hot { 0.8 } else { 0.2 / (v - 1) as f64 };
        vec![Array2::from_shape_fn((b, v), |(_, j)| row(j)); t]
    };
    let (real, fake) = (peaked(4), peaked(5));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let alpha = latext::gan::sample_alpha(&mut rng, b);
        let grads = {
            let s = Scope::bind(&store, |_| true);
            let r: Vec<Var> = real.iter().cloned().map(Var::constant).collect();
            let f: Vec<Var> = fake.iter().cloned().map(Var::constant).collect();
            let gp = gradient_penalty(|p| critic.forward(&s, p), &r, &f, &alpha, 10.0).unwrap();
            let loss = critic.forward(&s, &r).mean_all().neg().add(&critic.forward(&s, &f).mean_all()).add(&gp);
            s.grads(&loss)
        };
        adam.step(&mut store, &grads);
    }
    let gap = mean(&critic.score(&store, &SoftText { steps: real }).unwrap())
        - mean(&critic.score(&store, &SoftText { steps: fake }).unwrap());
    assert!(gap > 0.0, "{gap}");
}

#[test]
fn synthetic_text_is_on_the_simplex_and_deterministic() {
    for kind in ModelKind::ALL {
        let (s, _) = tiny_state(kind);
        let z = sample_noise_seeded(4, s.noise_dim(), s.config.normalize_noise(), 9).unwrap();
        let a = s.synth_text(&z).unwrap();
        assert_eq!(a.steps.len(), s.config.max_len);
        for step in &a.steps {
            for row in step.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
        assert_eq!(a, s.synth_text(&z).unwrap());
        let wrong = sample_noise_seeded(4, s.noise_dim() + 1, false, 9).unwrap();
        assert!(s.synth_text(&wrong).is_err(), "{kind}");
    }
}

#[test]
fn code_generator_output_is_tanh_bounded() {
    let (s, _) = tiny_state(ModelKind::LatextII);
    let z = sample_noise_seeded(8, s.noise_dim(), false, 1).unwrap();
    let c = s.nets.code_gen.generate(&s.params, &z).unwrap();
    assert!(c.0.iter().all(|&v| v > -1.0 && v < 1.0));
    // Saturated inputs round to the closed interval in floating point.
    let mut big = z.clone();
    big.0.mapv_inplace(|v| v * 1e3);
    let c = s.nets.code_gen.generate(&s.params, &big).unwrap();
    assert!(c.0.iter().all(|&v| (-1.0..=1.0).contains(&v)));
}

#[test]
fn generated_sentences_are_reproducible_and_in_vocabulary() {
    for kind in [ModelKind::Iwgan, ModelKind::SoftGan, ModelKind::LatextII] {
        let (s, _) = tiny_state(kind);
        let a = s.generate_sentences(640, 4).unwrap();
        assert_eq!(a.len(), 640);
        assert_eq!(a, s.generate_sentences(640, 4).unwrap());
        assert!(a
            .iter()
            .flat_map(|l| l.split_whitespace())
            .all(|w| s.vocab.contains(w) && !w.starts_with('<') || w == "<unk>"));
    }
}

#[test]
fn generation_does_not_consume_the_training_rng() {
    let (mut s, corpus) = tiny_state(ModelKind::SoftGan);
    let mut t = s.clone();
    t.generate_sentences(10, 1).unwrap();
    assert_eq!(s.train_iteration(&corpus).unwrap().generator, t.train_iteration(&corpus).unwrap().generator);
}

use dupot::data::{EmbeddingTable, InteractionRecord};
use dupot::gmm::{GaussianComponent, GmmModel};
use dupot::nn::{Activation, Mlp};
use dupot::preference::{train_domain, DomainModel, DomainTrainConfig, PreferenceWeights};
use dupot::rng::SeededRng;
use nalgebra::{DMatrix, DVector};

const D: usize = 4;
const K: usize = 4;

/// Components centred at `6 e_k` with unit covariance.
fn separated_gmm() -> GmmModel {
    let components = (0..K)
        .map(|k| {
            let mut mean = DVector::zeros(D);
            mean[k] = 6.0;
            GaussianComponent::new(mean, DMatrix::identity(D, D)).unwrap()
        })
        .collect();
    GmmModel::new(components, vec![1.0 / K as f64; K]).unwrap()
}

struct Corpus {
    users: EmbeddingTable,
    items: EmbeddingTable,
    train: Vec<InteractionRecord>,
    valid: Vec<InteractionRecord>,
}

/// Each user prefers one component; their embedding points toward it. The
/// rating is 5 for items drawn from the preferred component and 1 otherwise.
fn preference_corpus(seed: u64) -> Corpus {
    let mut rng = SeededRng::new(seed);
    let mut items = EmbeddingTable::new(D).unwrap();
    let mut item_comp = Vec::new();
    for k in 0..K {
        for j in 0..25 {
            let v: Vec<f64> = (0..D)
                .map(|i| if i == k { 6.0 } else { 0.0 } + rng.normal())
                .collect();
            items.insert_f64(format!("i{k}_{j}"), &v).unwrap();
            item_comp.push(k);
        }
    }
    let item_ids: Vec<String> = items.ids().map(str::to_owned).collect();
    let mut users = EmbeddingTable::new(D).unwrap();
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for u in 0..200 {
        let pref = u % K;
        let z: Vec<f64> = (0..D)
            .map(|i| if i == pref { 3.0 } else { 0.0 } + 0.3 * rng.normal())
            .collect();
        users.insert_f64(format!("u{u}"), &z).unwrap();
        for n in 0..16 {
            let v = rng.below(item_ids.len());
            let rating = if item_comp[v] == pref { 5.0 } else { 1.0 };
            let r = InteractionRecord::new(format!("u{u}"), &item_ids[v], rating).unwrap();
            if n < 12 {
                train.push(r)
            } else {
                valid.push(r)
            }
        }
    }
    Corpus {
        users,
        items,
        train,
        valid,
    }
}

fn config() -> DomainTrainConfig {
    DomainTrainConfig {
        batch_size: 64,
        max_epochs: 400,
        patience: 40,
        learning_rate: 1e-3,
        ..DomainTrainConfig::default()
    }
}

fn rmse(model: &DomainModel, c: &Corpus, records: &[InteractionRecord]) -> f64 {
    let se: f64 = records
        .iter()
        .map(|r| {
            let w = model
                .user_weights(&c.users.get_f64(&r.user_id).unwrap())
                .unwrap();
            let p = model
                .predict_rating(&w, &c.items.get_f64(&r.item_id).unwrap())
                .unwrap();
            (p - r.rating).powi(2)
        })
        .sum();
    (se / records.len() as f64).sqrt()
}

#[test]
fn learns_the_preferred_component_rule() {
    let c = preference_corpus(1);
    let untrained = train_domain(
        &c.users,
        &c.items,
        separated_gmm(),
        &c.train,
        &c.valid,
        &DomainTrainConfig {
            max_epochs: 0,
            ..config()
        },
        5,
    )
    .unwrap();
    // a single run lands in a basin where one component's weight is ~0 for
    // every user about one time in twenty
    let cfg = DomainTrainConfig {
        restarts: 3,
        ..config()
    };
    let trained = train_domain(
        &c.users,
        &c.items,
        separated_gmm(),
        &c.train,
        &c.valid,
        &cfg,
        5,
    )
    .unwrap();
    let (before, after) = (rmse(&untrained, &c, &c.valid), rmse(&trained, &c, &c.valid));
    // 1/4 of ratings are 5, the rest 1: the mean predictor scores sqrt(3)
    assert!(before > 1.5, "untrained {before}");
    assert!(after < 0.5, "trained {after}");
    let info = trained.training_info().unwrap();
    assert!((info.best_valid_rmse - after).abs() < 1e-12);
    assert!(info.final_train_mse <= info.initial_train_mse);

    // the learned weights concentrate on the user's preferred component
    for u in 0..K {
        let w = trained
            .user_weights(&c.users.get_f64(&format!("u{u}")).unwrap())
            .unwrap();
        let argmax = (0..K)
            .max_by(|&a, &b| w.as_slice()[a].total_cmp(&w.as_slice()[b]))
            .unwrap();
        assert_eq!(argmax, u % K, "weights {:?}", w.as_slice());
    }
}

#[test]
fn restarts_never_do_worse_than_the_first_run() {
    let c = preference_corpus(7);
    let cfg = DomainTrainConfig {
        max_epochs: 20,
        ..config()
    };
    let single = train_domain(
        &c.users,
        &c.items,
        separated_gmm(),
        &c.train,
        &c.valid,
        &cfg,
        8,
    )
    .unwrap();
    let multi = train_domain(
        &c.users,
        &c.items,
        separated_gmm(),
        &c.train,
        &c.valid,
        &DomainTrainConfig {
            restarts: 4,
            ..cfg.clone()
        },
        8,
    )
    .unwrap();
    let (a, b) = (
        single.training_info().unwrap(),
        multi.training_info().unwrap(),
    );
    assert_eq!(a.restart, 0);
    assert!(b.best_valid_rmse <= a.best_valid_rmse);
    if b.restart == 0 {
        assert_eq!(single.w_learner(), multi.w_learner());
    } else {
        assert_ne!(b.seed, 8);
    }
    let zero = DomainTrainConfig { restarts: 0, ..cfg };
    assert!(train_domain(
        &c.users,
        &c.items,
        separated_gmm(),
        &c.train,
        &c.valid,
        &zero,
        8
    )
    .is_err());
}

#[test]
fn constant_ratings_are_fitted() {
    let mut c = preference_corpus(2);
    for r in c.train.iter_mut().chain(c.valid.iter_mut()) {
        r.rating = 4.0;
    }
    let model = train_domain(
        &c.users,
        &c.items,
        separated_gmm(),
        &c.train,
        &c.valid,
        &config(),
        3,
    )
    .unwrap();
    let train_rmse = rmse(&model, &c, &c.train);
    assert!(train_rmse < 0.05, "train RMSE {train_rmse}");
}

#[test]
fn training_is_deterministic_and_seed_dependent() {
    let c = preference_corpus(3);
    let cfg = DomainTrainConfig {
        max_epochs: 5,
        ..config()
    };
    let run = |seed| {
        train_domain(
            &c.users,
            &c.items,
            separated_gmm(),
            &c.train,
            &c.valid,
            &cfg,
            seed,
        )
        .unwrap()
    };
    let (a, b) = (run(9), run(9));
    assert_eq!(a.w_learner(), b.w_learner());
    assert_eq!(a.r_predictor(), b.r_predictor());
    assert_eq!(a.training_info(), b.training_info());
    assert_ne!(a.w_learner(), run(10).w_learner());
}

#[test]
fn monotone_predictor_keeps_nonnegative_weights() {
    let c = preference_corpus(4);
    let model = train_domain(
        &c.users,
        &c.items,
        separated_gmm(),
        &c.train,
        &c.valid,
        &config(),
        1,
    )
    .unwrap();
    for layer in model.r_predictor().layers() {
        assert!(layer.weights.iter().all(|&w| w >= 0.0));
    }
    // more weight on the item's component never lowers its rating
    let item = c.items.get_f64("i2_0").unwrap();
    let mut last = f64::NEG_INFINITY;
    for step in 0..=10 {
        let t = step as f64 / 10.0;
        let mut w = vec![(1.0 - t) / 3.0; K];
        w[2] = t;
        let p = model
            .predict_unclamped(&PreferenceWeights::new(w).unwrap(), &item)
            .unwrap();
        assert!(p >= last - 1e-12);
        last = p;
    }
}

#[test]
fn empty_validation_falls_back_to_training_rmse() {
    let c = preference_corpus(5);
    let cfg = DomainTrainConfig {
        max_epochs: 3,
        ..config()
    };
    let model = train_domain(&c.users, &c.items, separated_gmm(), &c.train, &[], &cfg, 1).unwrap();
    let info = model.training_info().unwrap();
    let best = info
        .history
        .iter()
        .map(|e| e.valid_rmse)
        .fold(f64::INFINITY, f64::min);
    assert!(info.best_valid_rmse <= best);
    assert!((rmse(&model, &c, &c.train) - info.best_valid_rmse).abs() < 1e-9);
}

#[test]
fn unknown_ids_are_data_errors() {
    let c = preference_corpus(6);
    let bad = vec![InteractionRecord::new("nobody", "i0_0", 3.0).unwrap()];
    let err =
        train_domain(&c.users, &c.items, separated_gmm(), &bad, &[], &config(), 1).unwrap_err();
    assert!(err.to_string().contains("nobody"));
}

#[test]
fn user_weights_stay_on_the_simplex() {
    let mut rng = SeededRng::new(11);
    let w = Mlp::init(
        &[D, 8, K],
        &[Activation::Relu, Activation::Softmax],
        &mut rng,
    )
    .unwrap();
    let r = Mlp::init(
        &[K, K, 1],
        &[Activation::Relu, Activation::Linear],
        &mut rng,
    )
    .unwrap();
    let model = DomainModel::new(separated_gmm(), w, r).unwrap();
    for i in 0..10_000 {
        let scale = 10f64.powi(i % 5 - 1);
        let z: Vec<f64> = (0..D).map(|_| scale * rng.normal()).collect();
        let w = model.user_weights(&z).unwrap();
        let sum: f64 = w.as_slice().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9, "sum {sum}");
        assert!(w.as_slice().iter().all(|&x| x >= 0.0));
    }
}

/// Reordering the mixture components, together with the w-learner's output
/// rows and the r-predictor's input columns, leaves every prediction unchanged.
#[test]
fn predictions_are_invariant_to_component_order() {
    let mut rng = SeededRng::new(12);
    let gmm = separated_gmm();
    let w = Mlp::init(
        &[D, 8, K],
        &[Activation::Relu, Activation::Softmax],
        &mut rng,
    )
    .unwrap();
    let r = Mlp::init(
        &[K, 6, 1],
        &[Activation::Relu, Activation::Linear],
        &mut rng,
    )
    .unwrap();
    let perm = [2, 0, 3, 1];

    let components: Vec<_> = perm.iter().map(|&k| gmm.components()[k].clone()).collect();
    let weights: Vec<_> = perm.iter().map(|&k| gmm.weights()[k]).collect();
    let gmm_p = GmmModel::new(components, weights).unwrap();
    let mut w_p = w.clone();
    let out = w_p.layers_mut().last_mut().unwrap();
    let (ow, ob) = (out.weights.clone(), out.bias.clone());
    for (new, &old) in perm.iter().enumerate() {
        out.weights.set_row(new, &ow.row(old));
        out.bias[new] = ob[old];
    }
    let mut r_p = r.clone();
    let first = &mut r_p.layers_mut()[0];
    let fw = first.weights.clone();
    for (new, &old) in perm.iter().enumerate() {
        first.weights.set_column(new, &fw.column(old));
    }

    let a = DomainModel::new(gmm, w, r).unwrap();
    let b = DomainModel::new(gmm_p, w_p, r_p).unwrap();
    for _ in 0..200 {
        let z_u: Vec<f64> = (0..D).map(|_| 2.0 * rng.normal()).collect();
        let z_v: Vec<f64> = (0..D).map(|_| 3.0 * rng.normal() + 2.0).collect();
        let pa = a
            .predict_unclamped(&a.user_weights(&z_u).unwrap(), &z_v)
            .unwrap();
        let pb = b
            .predict_unclamped(&b.user_weights(&z_u).unwrap(), &z_v)
            .unwrap();
        assert!((pa - pb).abs() < 1e-12 * (1.0 + pa.abs()), "{pa} vs {pb}");
    }
}

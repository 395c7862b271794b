//! Scratch diagnostics for cluster-label quality during training.

use icon::clustering::{rank_stat_pairs, RankStatConfig};
use icon::datagen::{gen_spurious_shift, SpuriousShiftConfig};
use icon::losses::pairs_from_clusters;
use icon::model::{init_model, BackboneSpec, Head};
use icon::rng::{substream, Stream};
use icon::trainer::{Trainer, TrainConfig};
use rand::seq::SliceRandom;

fn main() {
    let noise: f64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.7);
    let k: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);
    let lambda: f64 = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1.0);

    let gen_cfg = SpuriousShiftConfig {
        noise_sigma: noise,
        env_sigma_s: 0.05,
        ..Default::default()
    };
    let ds = gen_spurious_shift(&gen_cfg, 100).unwrap();
    let cfg = TrainConfig {
        lambda_cluster: lambda,
        ..Default::default()
    };
    let model = init_model(&BackboneSpec::default_for(ds.input_dim), 2, 1.0, cfg.seed).unwrap();
    let mut trainer = Trainer::new(model, cfg.clone()).unwrap();

    let mut shuffle = substream(cfg.seed, Stream::Shuffle);
    let mut augment = substream(cfg.seed, Stream::Augment);
    let n = ds.source.len();
    let steps = n.div_ceil(cfg.batch_size);
    let total = (cfg.epochs * steps) as f64;

    let target = ds.target_for_eval();
    for epoch in 0..cfg.epochs {
        let mut s_idx: Vec<usize> = (0..n).collect();
        let mut t_idx: Vec<usize> = (0..ds.target_len()).collect();
        s_idx.shuffle(&mut shuffle);
        t_idx.shuffle(&mut shuffle);
        for step in 0..steps {
            let bs: Vec<(Vec<f64>, usize)> = (0..cfg.batch_size)
                .map(|j| ds.source[s_idx[(step * cfg.batch_size + j) % n]].clone())
                .collect();
            let bt: Vec<Vec<f64>> = (0..cfg.batch_size)
                .map(|j| {
                    ds.target_input(t_idx[(step * cfg.batch_size + j) % ds.target_len()])
                        .to_vec()
                })
                .collect();
            let frac = (epoch * steps + step) as f64 / total;
            trainer
                .step(&bs, &bt, epoch, frac, None, &mut augment)
                .unwrap();
        }

        // rank-stat label quality vs ground-truth class equality on T
        let sample: Vec<usize> = (0..200).map(|i| i * target.len() / 200).collect();
        let feats: Vec<Vec<f64>> = sample
            .iter()
            .map(|&i| trainer.model.features(&target[i].0).unwrap())
            .collect();
        let raw: Vec<Vec<f64>> = sample.iter().map(|&i| target[i].0.clone()).collect();
        let rank_cfg = RankStatConfig::for_feature_dim(trainer.model.feature_dim);
        let acc_of = |vecs: &[Vec<f64>], k: usize| {
            let pairs = rank_stat_pairs(vecs, k).unwrap();
            let mut correct = 0usize;
            let mut same_count = 0usize;
            for p in &pairs {
                let truth = target[sample[p.i]].1 == target[sample[p.j]].1;
                if p.same == truth {
                    correct += 1;
                }
                if p.same {
                    same_count += 1;
                }
            }
            (
                correct as f64 / pairs.len() as f64,
                same_count as f64 / pairs.len() as f64,
            )
        };
        let (feat_acc, feat_same) = acc_of(&feats, k.min(rank_cfg.k.max(1)).max(1));
        let (raw_acc, raw_same) = acc_of(&raw, k.min(raw[0].len()));
        let g_out: Vec<Vec<f64>> = sample
            .iter()
            .map(|&i| trainer.model.predict(&target[i].0, Head::G).unwrap())
            .collect();
        let conf_pairs = pairs_from_clusters(&g_out, cfg.cluster_conf);
        let mut g_correct = 0usize;
        for p in &conf_pairs {
            let truth = target[sample[p.i]].1 == target[sample[p.j]].1;
            if p.same == truth {
                g_correct += 1;
            }
        }
        let mean_conf: f64 = g_out
            .iter()
            .map(|p| p.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .sum::<f64>()
            / g_out.len() as f64;
        let cluster0 = g_out.iter().filter(|p| p[0] >= p[1]).count();
        println!(
            "epoch {epoch:2}  feat acc {:.3}/same {:.3}  raw acc {:.3}/same {:.3}  g-conf {:.3} g0 {:3}/200  conf pairs {:5}  conf acc {:.3}",
            feat_acc,
            feat_same,
            raw_acc,
            raw_same,
            mean_conf,
            cluster0,
            conf_pairs.len(),
            if conf_pairs.is_empty() { f64::NAN } else { g_correct as f64 / conf_pairs.len() as f64 },
        );
    }
}

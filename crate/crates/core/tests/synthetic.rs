//! Oracles on the generated images: the foreground alone identifies the class,
//! the domains are separable from raw pixels, and the shift disappears once
//! the backgrounds match.

use toalign_core::data::{Dataset, Domain, SyntheticConfig};

fn configs() -> Vec<SyntheticConfig> {
    let base = SyntheticConfig { n_source: 40, n_target_train: 40, n_target_test: 40, ..Default::default() };
    vec![
        base.clone(),
        SyntheticConfig { target_background: 0.8, seed: 1, ..base.clone() },
        SyntheticConfig { num_classes: 6, noise_sigma: 0.1, seed: 2, ..base },
    ]
}

/// Nearest template over the foreground window, templates being the class
/// masks at the mean amplitude.
fn template_accuracy(cfg: &SyntheticConfig, data: &Dataset) -> f64 {
    let [_, h, w] = cfg.image_size;
    let win = cfg.foreground_window();
    let level = cfg.foreground_intensity * 0.9;
    let masks: Vec<Vec<bool>> = (0..cfg.num_classes).map(|k| cfg.pattern_mask(k)).collect();
    let mut correct = 0;
    for s in &data.samples {
        let x = s.x.data();
        let dist = |k: usize| {
            let mut d = 0.0;
            for r in win.rows.0..win.rows.1 {
                for c in win.cols.0..win.cols.1 {
                    let t = if masks[k][r * w + c] { level } else { 0.0 };
                    d += (x[r * w + c] - t).powi(2);
                }
            }
            d
        };
        let best = (0..cfg.num_classes).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap();
        correct += usize::from(Some(best) == s.label);
        assert_eq!(x.len(), h * w);
    }
    correct as f64 / data.len() as f64
}

fn centroid(samples: &[&[f64]]) -> Vec<f64> {
    let mut m = vec![0.0; samples[0].len()];
    for s in samples {
        for (a, b) in m.iter_mut().zip(s.iter()) {
            *a += b / samples.len() as f64;
        }
    }
    m
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> usize {
    let d = |c: &Vec<f64>| c.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    (0..centroids.len()).min_by(|&a, &b| d(&centroids[a]).total_cmp(&d(&centroids[b]))).unwrap()
}

#[test]
fn foreground_template_oracle_is_near_perfect() {
    for cfg in configs() {
        let data = cfg.generate().unwrap();
        for split in [&data.source_train, &data.target_test] {
            let acc = template_accuracy(&cfg, split);
            assert!(acc >= 0.99, "{cfg:?}: template accuracy {acc}");
        }
    }
}

#[test]
fn raw_pixel_domain_classifier_separates_domains() {
    for cfg in configs() {
        let data = cfg.generate().unwrap();
        let half = |d: &Dataset| d.len() / 2;
        let (s_fit, s_held) = data.source_train.samples.split_at(half(&data.source_train));
        let (t_fit, t_held) = data.target_train.samples.split_at(half(&data.target_train));
        let cs = centroid(&s_fit.iter().map(|s| s.x.data()).collect::<Vec<_>>());
        let ct = centroid(&t_fit.iter().map(|s| s.x.data()).collect::<Vec<_>>());
        let held: Vec<_> = s_held.iter().chain(t_held).chain(&data.target_test.samples).collect();
        let correct = held
            .iter()
            .filter(|s| {
                let guess = if nearest(s.x.data(), &[cs.clone(), ct.clone()]) == 0 { Domain::Source } else { Domain::Target };
                guess == s.domain
            })
            .count();
        let acc = correct as f64 / held.len() as f64;
        assert!(acc > 0.95, "{cfg:?}: domain accuracy {acc}");
    }
}

#[test]
fn source_classifier_transfers_when_backgrounds_match() {
    for cfg in configs() {
        let matched = cfg.generate_matched().unwrap();
        let centroids: Vec<Vec<f64>> = (0..cfg.num_classes)
            .map(|k| {
                let xs: Vec<&[f64]> = matched
                    .source_train
                    .samples
                    .iter()
                    .filter(|s| s.label == Some(k))
                    .map(|s| s.x.data())
                    .collect();
                centroid(&xs)
            })
            .collect();
        let test = &matched.target_test.samples;
        let correct = test.iter().filter(|s| Some(nearest(s.x.data(), &centroids)) == s.label).count();
        let acc = correct as f64 / test.len() as f64;
        assert!(acc > 0.8, "{cfg:?}: matched-background accuracy {acc}");
        assert!(test.iter().all(|s| s.domain == Domain::Target));
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffnet::GradBuffer;
use crate::encoding::HashGridConfig;

pub(crate) fn tiny_config() -> FieldConfig {
    FieldConfig {
        grid: HashGridConfig {
            levels: 2,
            table_size: 1 << 10,
            features_per_level: 2,
            base_resolution: 4,
            growth_factor: 2.0,
        },
        pos_freq: FreqConfig::new(2, true),
        dir_freq: FreqConfig::new(1, true),
        time_freq: FreqConfig::new(2, true),
        hidden: vec![8, 8],
        geo_features: 3,
        max_flow: 0.15,
        time_count: 5,
    }
}

fn random_dir(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}

#[test]
fn zero_initialized_static_field() {
    let bundle = FieldBundle::<f64>::zeroed(tiny_config(), 1).unwrap();
    let s = bundle.static_query([0.2, 0.4, 0.9], [0.0, 0.0, -1.0]).unwrap();
    assert!((s.sigma - std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(s.rgb, [0.5; 3]);
    assert_eq!(s.sf_forward, [0.0; 3]);
}

#[test]
fn static_density_ignores_direction() {
    let bundle = FieldBundle::<f64>::new(tiny_config(), 7).unwrap();
    let x = [0.3, 0.6, 0.1];
    let a = bundle.static_query(x, [1.0, 0.0, 0.0]).unwrap();
    let b = bundle.static_query(x, [0.0, 0.6, 0.8]).unwrap();
    assert_eq!(a.sigma, b.sigma);
    assert_ne!(a.rgb, b.rgb);
}

#[test]
fn outputs_stay_in_range() {
    let bundle = FieldBundle::<f32>::new(tiny_config(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 10_000;
    let xs: Vec<[f32; 3]> = (0..n)
        .map(|_| std::array::from_fn(|_| rng.gen_range(0.0..=1.0)))
        .collect();
    let ds: Vec<[f32; 3]> = (0..n)
        .map(|_| random_dir(&mut rng).map(|v| v as f32))
        .collect();
    let ts: Vec<f32> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
    let st = bundle.static_field.eval(&bundle.store, &xs, &ds, false).unwrap();
    let dy = bundle
        .dynamic_field
        .eval(&bundle.store, &xs, &ds, &ts, false)
        .unwrap();
    for batch in [(&st.sigma, &st.rgb), (&dy.sigma, &dy.rgb)] {
        assert!(batch.0.iter().all(|s| s.is_finite() && *s >= 0.0));
        assert!(batch
            .1
            .iter()
            .all(|c| c.iter().all(|v| (0.0..=1.0).contains(v))));
    }
    let bound = bundle.config.max_flow + 1e-6;
    assert!(dy
        .sf_forward
        .iter()
        .chain(&dy.sf_backward)
        .all(|f| f.iter().all(|v| v.abs() <= bound)));
}

#[test]
fn unnormalized_direction_is_rejected() {
    let bundle = FieldBundle::<f32>::zeroed(tiny_config(), 1).unwrap();
    assert!(matches!(
        bundle.static_query([0.5; 3], [0.0, 0.0, -2.0]),
        Err(Error::Input(_))
    ));
}

#[test]
fn zero_deformation_is_identity() {
    let bundle = FieldBundle::<f32>::zeroed(tiny_config(), 1).unwrap();
    let x = [0.123, 0.77, 0.5];
    let out = bundle.deform(x, [0.0, 1.0, 0.0], 0.25).unwrap();
    assert_eq!(out.x_star, x);
    assert_eq!(out.clamped, [false; 3]);
    // random init zeroes the output layer too
    let bundle = FieldBundle::<f32>::new(tiny_config(), 5).unwrap();
    assert_eq!(bundle.deform(x, [0.0, 1.0, 0.0], 0.6).unwrap().x_star, x);
}

fn force_offset(bundle: &mut FieldBundle<f64>, offset: [f64; 3]) {
    let last = bundle.deform_field.mlp().spec().num_layers() - 1;
    let id = bundle.store.id(&format!("deform.mlp.b{last}")).unwrap();
    bundle.store.values_mut(id).copy_from_slice(&offset);
}

#[test]
fn constant_offset_is_added() {
    let mut bundle = FieldBundle::<f64>::zeroed(tiny_config(), 1).unwrap();
    force_offset(&mut bundle, [0.1, 0.0, 0.0]);
    let out = bundle.deform([0.5; 3], [0.0, 0.0, 1.0], 0.0).unwrap();
    assert!((out.x_star[0] - 0.6).abs() < 1e-12);
    assert_eq!(&out.x_star[1..], &[0.5, 0.5]);
    let edge = bundle.deform([0.95, 0.5, 0.5], [0.0, 0.0, 1.0], 0.0).unwrap();
    assert_eq!(edge.x_star[0], 1.0);
    assert_eq!(edge.clamped, [true, false, false]);
}

#[test]
fn zero_dynamic_field() {
    let bundle = FieldBundle::<f64>::zeroed(tiny_config(), 1).unwrap();
    let s = bundle
        .dynamic_query([0.4, 0.4, 0.4], [0.0, 0.0, -1.0], 0.5)
        .unwrap();
    assert_eq!(s.sf_backward, [0.0; 3]);
    assert_eq!(s.sf_forward, [0.0; 3]);
    assert!((s.sigma - std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(s.rgb, [0.5; 3]);
    assert!(matches!(
        bundle.dynamic_query([0.4; 3], [0.0, 0.0, -1.0], 1.5),
        Err(Error::Input(_))
    ));
}

#[test]
fn dynamic_field_depends_on_time() {
    let bundle = FieldBundle::<f64>::new(tiny_config(), 21).unwrap();
    let d = [0.0, 0.0, -1.0];
    let a = bundle.dynamic_query([0.4, 0.5, 0.6], d, 0.0).unwrap();
    let b = bundle.dynamic_query([0.4, 0.5, 0.6], d, 0.75).unwrap();
    assert_ne!(a.sigma, b.sigma);
    assert_ne!(a.sf_forward, b.sf_forward);
}

#[test]
fn flow_heads_are_independent() {
    let mut bundle = FieldBundle::<f64>::new(tiny_config(), 8).unwrap();
    let x = [0.3, 0.2, 0.7];
    let d = [0.0, 1.0, 0.0];
    let before = bundle.dynamic_query(x, d, 0.5).unwrap();
    let last = bundle.dynamic_field.trunk_mlp().spec().num_layers() - 1;
    let w = bundle.store.id(&format!("dynamic.trunk.w{last}")).unwrap();
    let b = bundle.store.id(&format!("dynamic.trunk.b{last}")).unwrap();
    let cols = bundle.store.section(w).shape[1];
    // zero the forward-flow columns 4..7
    for (i, v) in bundle.store.values_mut(w).iter_mut().enumerate() {
        if (4..7).contains(&(i % cols)) {
            *v = 0.0;
        }
    }
    bundle.store.values_mut(b)[4..7].fill(0.0);
    let after = bundle.dynamic_query(x, d, 0.5).unwrap();
    assert_eq!(after.sf_forward, [0.0; 3]);
    assert_eq!(after.sf_backward, before.sf_backward);
    assert_eq!(after.sigma, before.sigma);
}

#[test]
fn advect_examples() {
    let zero: FieldSample<f64> = FieldSample {
        sigma: 1.0,
        rgb: [0.0; 3],
        sf_backward: [0.0; 3],
        sf_forward: [0.0; 3],
    };
    assert_eq!(advect([0.2; 3], &zero, FlowDirection::Forward), [0.2; 3]);
    let moving = FieldSample {
        sf_forward: [0.1, 0.0, 0.0],
        sf_backward: [-0.05, 0.0, 0.0],
        ..zero
    };
    let p = advect([0.2, 0.2, 0.2], &moving, FlowDirection::Forward);
    assert!((p[0] - 0.3).abs() < 1e-12 && p[1] == 0.2 && p[2] == 0.2);
    let q = advect([0.2, 0.2, 0.2], &moving, FlowDirection::Backward);
    assert!((q[0] - 0.15).abs() < 1e-12);
    assert_eq!(advect([0.98; 3], &moving, FlowDirection::Forward)[0], 1.0);
}

#[test]
fn frame_times() {
    let cfg = tiny_config();
    assert_eq!(cfg.frame_time(0), 0.0);
    assert_eq!(cfg.frame_time(4), 1.0);
    assert_eq!(cfg.time_step(), 0.25);
    let single = FieldConfig {
        time_count: 1,
        ..cfg
    };
    assert_eq!(single.frame_time(0), 0.0);
    assert_eq!(single.time_step(), 0.0);
}

/// Scalar probe of a dynamic batch used to check position gradients.
fn probe(bundle: &FieldBundle<f64>, x: [f64; 3], d: [f64; 3], t: f64) -> f64 {
    let b = bundle
        .dynamic_field
        .eval(&bundle.store, &[x], &[d], &[t], false)
        .unwrap();
    let rgb = b.rgb[0];
    let (fb, ff) = (b.sf_backward[0], b.sf_forward[0]);
    1.3 * b.sigma[0] + 0.7 * rgb[0] - 0.4 * rgb[2] + 2.0 * fb[1] - 1.5 * ff[0] + 0.9 * ff[2]
}

#[test]
fn dynamic_position_gradient_matches_finite_differences() {
    let bundle = FieldBundle::<f64>::new(tiny_config(), 13).unwrap();
    let x = [0.37, 0.61, 0.29];
    let d = [0.0, 0.6, 0.8];
    let t = 0.4;
    let b = bundle
        .dynamic_field
        .eval(&bundle.store, &[x], &[d], &[t], true)
        .unwrap();
    let mut grads = GradBuffer::for_store(&bundle.store);
    let dx = bundle
        .dynamic_field
        .backward(
            &bundle.store,
            &b,
            &[x],
            &[1.3],
            &[[0.7, 0.0, -0.4]],
            Some((&[[0.0, 2.0, 0.0]], &[[-1.5, 0.0, 0.9]])),
            &mut grads,
            true,
        )
        .unwrap()
        .unwrap();
    let h = 1e-6;
    for a in 0..3 {
        let mut p = x;
        p[a] += h;
        let mut m = x;
        m[a] -= h;
        let numeric = (probe(&bundle, p, d, t) - probe(&bundle, m, d, t)) / (2.0 * h);
        assert!(
            (numeric - dx[0][a]).abs() < 1e-6 * numeric.abs().max(1.0),
            "axis {a}: {numeric} vs {}",
            dx[0][a]
        );
    }
}

#[test]
fn dynamic_parameter_gradients_match_finite_differences() {
    let mut bundle = FieldBundle::<f64>::new(tiny_config(), 17).unwrap();
    let x = [0.52, 0.33, 0.71];
    let d = [1.0, 0.0, 0.0];
    let t = 0.25;
    let field = bundle.dynamic_field.clone();
    let err = crate::diffnet::grad_check_sampled(&mut bundle.store, 1e-5, 40, |store| {
        let b = field.eval(store, &[x], &[d], &[t], true)?;
        let mut grads = GradBuffer::for_store(store);
        field.backward(
            store,
            &b,
            &[x],
            &[1.3],
            &[[0.7, 0.0, -0.4]],
            Some((&[[0.0, 2.0, 0.0]], &[[-1.5, 0.0, 0.9]])),
            &mut grads,
            false,
        )?;
        store.accumulate(&grads);
        let rgb = b.rgb[0];
        let (fb, ff) = (b.sf_backward[0], b.sf_forward[0]);
        Ok(1.3 * b.sigma[0] + 0.7 * rgb[0] - 0.4 * rgb[2] + 2.0 * fb[1] - 1.5 * ff[0]
            + 0.9 * ff[2])
    })
    .unwrap();
    assert!(err < 1e-6, "max relative error {err}");
}

#[test]
fn bundle_rebinds_from_store() {
    let bundle = FieldBundle::<f32>::new(tiny_config(), 2).unwrap();
    let again = FieldBundle::from_store(bundle.config.clone(), bundle.store.clone()).unwrap();
    let q = |b: &FieldBundle<f32>| b.static_query([0.1, 0.2, 0.3], [0.0, 0.0, 1.0]).unwrap();
    assert_eq!(q(&bundle), q(&again));
    let mut other = tiny_config();
    other.hidden = vec![4, 4];
    assert!(FieldBundle::from_store(other, bundle.store.clone()).is_err());
}

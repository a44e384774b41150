//! Grid geometry: constructions, relatives, Whitney cubes, bodies, goodness,
//! sharp crosses, deep embeddings and halos.

use proptest::prelude::*;
use tbcorona::grid::*;

fn fine(x: f64) -> i64 {
    (x * (1u64 << FINE_BITS) as f64).round() as i64
}

fn cube1(a: f64, level: i32) -> Cube {
    Cube::new(1, level, [fine(a), 0])
}

/// Distance between two closed real boxes.
fn closed_box_distance(a: &FBox, b: &FBox) -> f64 {
    (0..a.dim)
        .map(|i| {
            let g = (b.lo[i] - a.hi[i]).max(a.lo[i] - b.hi[i]).max(0.0);
            g * g
        })
        .sum::<f64>()
        .sqrt()
}

#[test]
fn standard_grid_tiles_unit_interval() {
    let g = make_grid(1, 3, 0, GridParam::Shift(vec![[0, 0]; 3])).unwrap();
    for k in 0..8 {
        let c = g.cube_containing([fine(k as f64 / 8.0), 0], 3);
        assert_eq!(c, cube1(k as f64 / 8.0, 3));
    }
    assert_eq!(g.cube_containing([fine(0.7), 0], 0), cube1(0.0, 0));
}

#[test]
fn translated_grid_is_shifted_copy() {
    let g = make_grid(1, 3, 0, GridParam::Translate([1, 0])).unwrap();
    let s = Grid::standard(1, 3, 0).unwrap();
    for level in 0..=3 {
        for k in -2..10i64 {
            let q = Cube::from_index(1, level, [k, 0]);
            let shifted = Cube::new(1, level, [q.lo[0] + fine(0.125), 0]);
            assert!(s.is_member(&q));
            assert!(g.is_member(&shifted), "level {level} k {k}");
        }
    }
}

#[test]
fn sampled_2d_grid_is_in_parameter_space_and_reproducible() {
    assert_eq!(Grid::param_space_size(2, 2, 0), 16);
    let all: Vec<Grid> = (0..16).map(|i| Grid::from_index(2, 2, 0, Construction::Shift, i).unwrap()).collect();
    for i in 0..16 {
        for j in 0..i {
            assert_ne!(all[i].param, all[j].param);
        }
    }
    let a = Grid::sample_seeded(2, 2, 0, Construction::Shift, 7).unwrap();
    let b = Grid::sample_seeded(2, 2, 0, Construction::Shift, 7).unwrap();
    assert_eq!(a, b);
    assert!(all.contains(&a));
}

#[test]
fn invalid_parameters_rejected() {
    assert!(make_grid(1, 3, 0, GridParam::Shift(vec![[0, 0]; 2])).is_err());
    assert!(make_grid(1, 3, 0, GridParam::Shift(vec![[2, 0]; 3])).is_err());
    assert!(make_grid(1, 3, 0, GridParam::Translate([8, 0])).is_err());
    assert!(make_grid(3, 3, 0, GridParam::Translate([0, 0])).is_err());
    assert!(make_grid(1, 3, 1, GridParam::Translate([0, 0])).is_err());
}

#[test]
fn relatives_1d_and_2d() {
    let g = Grid::standard(1, 4, 0).unwrap();
    let r = relatives(&g, &cube1(0.0, 0), 0).unwrap();
    assert_eq!(r.children, vec![cube1(0.0, 1), cube1(0.5, 1)]);
    let mut inner = r.inner.clone();
    inner.sort();
    assert_eq!(inner, vec![cube1(0.25, 2), cube1(0.5, 2)]);
    assert_eq!(r.outer.len(), 2);

    let q = cube1(0.375, 3);
    assert_eq!(g.ancestor(&q, 2).unwrap(), cube1(0.0, 1));
    assert_eq!(g.ancestor(&g.ancestor(&q, 1).unwrap(), 1).unwrap(), cube1(0.0, 1));
    assert!(g.ancestor(&q, 4).is_err());

    let g2 = Grid::standard(2, 4, 0).unwrap();
    let r2 = relatives(&g2, &Cube::new(2, 0, [0, 0]), 0).unwrap();
    assert_eq!(r2.children.len(), 4);
    assert_eq!(r2.grandchildren.len(), 16);
    assert_eq!(r2.inner.len(), 4);
    assert_eq!(r2.outer.len(), 12);
}

/// All maximal dyadic subintervals `S` of `[0,1)` down to `m` with `3S ⊂ [0,1)`.
fn whitney_oracle_1d(m: i32) -> Vec<Cube> {
    let ok = |l: i32, k: i64| {
        let s = 1.0 / (1u64 << l) as f64;
        let a = k as f64 * s;
        a - s >= 0.0 && a + 2.0 * s <= 1.0
    };
    let mut out = Vec::new();
    for l in 1..=m {
        for k in 0..(1i64 << l) {
            if !ok(l, k) {
                continue;
            }
            // no ancestor qualifies
            let maximal = (1..l).all(|pl| !ok(pl, k >> (l - pl)));
            if maximal {
                out.push(Cube::from_index(1, l, [k, 0]));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn whitney_unit_interval_matches_enumeration() {
    let w = whitney(&cube1(0.0, 0), 4);
    assert_eq!(w.cubes, whitney_oracle_1d(4));
    assert!(w.cubes.contains(&cube1(0.25, 2)));
    assert!(w.cubes.contains(&cube1(0.5, 2)));
    // residual covers exactly what the cubes miss
    let covered: f64 = w.cubes.iter().chain(&w.residual).map(|c| c.volume()).sum();
    assert!((covered - 1.0).abs() < 1e-15);
}

#[test]
fn whitney_at_finest_level_is_residual_only() {
    let k = cube1(0.5, 4);
    let w = whitney(&k, 4);
    assert!(w.cubes.is_empty());
    assert_eq!(w.residual, vec![k]);
}

#[test]
fn whitney_2d_cubes_keep_distance_from_boundary() {
    let k = Cube::new(2, 0, [0, 0]);
    let w = whitney(&k, 4);
    assert!(!w.cubes.is_empty());
    for s in &w.cubes {
        assert!(s.triple_within(&k));
        assert!(distance_to_boundary(s, &k) >= s.side());
        // maximality: the parent does not satisfy the property
        let parent = Cube::new(2, s.level - 1, [s.lo[0] & !(s.side_fine() * 2 - 1), s.lo[1] & !(s.side_fine() * 2 - 1)]);
        assert!(s.level == 1 || !parent.triple_within(&k));
    }
    for (i, a) in w.cubes.iter().enumerate() {
        for b in &w.cubes[i + 1..] {
            assert!(!a.intersects(b));
        }
    }
}

#[test]
fn body_and_skeleton_points() {
    let k = cube1(0.0, 0);
    let b = body(&k, 4);
    assert!(b.contains_point([0.5, 0.0]));
    let sk = skeleton(&k);
    for p in [0.0, 0.5, 1.0] {
        assert!(sk.contains_point([p, 0.0]));
    }
    assert!(!sk.contains_point([0.25, 0.0]));
}

#[test]
fn body_distance_matches_brute_force_over_faces() {
    let k = cube1(0.0, 0);
    let faces = body(&k, 4);
    for j in [cube1(0.625, 3), cube1(0.5625, 4), cube1(0.125, 3), cube1(0.40625, 5)] {
        let brute = faces.boxes.iter().map(|f| closed_box_distance(&j.to_box(), f)).fold(f64::INFINITY, f64::min);
        assert!((body_distance(&j, &k, 4) - brute).abs() < 1e-15, "{j:?}");
    }
    let k2 = Cube::new(2, 0, [0, 0]);
    let faces2 = body(&k2, 3);
    for (x, y, l) in [(0.625, 0.375, 3), (0.25, 0.5, 2), (0.125, 0.75, 4)] {
        let j = Cube::new(2, l, [fine(x), fine(y)]);
        let brute = faces2.boxes.iter().map(|f| closed_box_distance(&j.to_box(), f)).fold(f64::INFINITY, f64::min);
        assert!((body_distance(&j, &k2, 3) - brute).abs() < 1e-15, "{j:?}");
    }
}

#[test]
fn goodness_examples() {
    let k = cube1(0.0, 0);
    let touching = cube1(0.5, 3);
    let g = is_eps_good(&touching, &k, 0.1, 6);
    assert_eq!(g.distance, 0.0);
    assert!(!g.good);
    let selfcase = is_eps_good(&k, &k, 0.5, 6);
    assert_eq!(selfcase.distance, 0.0);
    assert!((selfcase.threshold - 2.0).abs() < 1e-15);
    assert!(!selfcase.good);

    let j = cube1(9.0 / 16.0, 4);
    let g = is_eps_good(&j, &k, 0.5, 4);
    assert!((g.threshold - 0.5).abs() < 1e-15);
    let brute = body(&k, 4).boxes.iter().map(|f| closed_box_distance(&j.to_box(), f)).fold(f64::INFINITY, f64::min);
    assert_eq!(g.distance, brute);
    assert_eq!(g.good, brute > 0.5);
}

#[test]
fn sharp_cross_examples() {
    let g = Grid::standard(1, 8, 0).unwrap();
    // A cube touching 1/2 is bad in [0,1) whatever its size.
    let bad = cube1(0.5, 6);
    let sc = sharp_cross(&bad, &g, 0.25);
    assert_eq!(sc.cross, None);
    assert_eq!(sc.flat, None);
    // Oracle: the cross is the deepest ancestor below which every ancestor is good.
    let j = cube1(0.3125, 8);
    let mut expected = None;
    for level in 0..=8 {
        let a = g.cube_containing(j.lo, level);
        if !is_eps_good(&j, &a, 0.25, 8).good {
            break;
        }
        expected = Some(a);
    }
    assert_eq!(sharp_cross(&j, &g, 0.25).cross, expected);
}

fn cube_strategy(dim: usize, max_level: i32) -> impl Strategy<Value = Cube> {
    (2..=max_level, 0i64..(1 << max_level), 0i64..(1 << max_level)).prop_map(move |(l, a, b)| {
        Cube::from_index(dim, l, [a >> (max_level - l), if dim == 2 { b >> (max_level - l) } else { 0 }])
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sharp_cross_monotone(j in cube_strategy(1, 9), extra in 1i32..3, off in 0i64..4, eps in 0.05f64..0.45) {
        let g = Grid::standard(1, 12, 0).unwrap();
        let jl = j.level + extra;
        let sub = Cube::new(1, jl, [j.lo[0] + (off % (1 << extra)) * fine_side(jl), 0]);
        let a = sharp_cross(&j, &g, eps).cross;
        let b = sharp_cross(&sub, &g, eps).cross;
        if let Some(a) = a {
            let b = b.expect("subcube of a cube with a cross has one");
            prop_assert!(a.contains_cube(&b));
        }
    }

    #[test]
    fn indentation_key_fact(j in cube_strategy(2, 6), eps in 0.6f64..0.95, idx in 0u128..(1 << 12)) {
        let g = Grid::from_index(2, 6, 0, Construction::Shift, idx).unwrap();
        let j = g.cube_containing(j.lo, j.level);
        let sc = sharp_cross(&j, &g, eps);
        if let (Some(c), Some(f)) = (sc.cross, sc.flat) {
            if j.level >= c.level + 2 {
                prop_assert!(j.triple_within(&f) || j.dilate([3.0, 3.0]).within(&f.to_box(), 0.0));
                let rel = relatives(&g, &c, 0).unwrap();
                prop_assert!(rel.inner.contains(&f));
            }
        }
    }

    #[test]
    fn grid_cubes_nest(idx in 0u128..(1 << 8), a in 0i64..16, b in 0i64..16, la in 0i32..=4, lb in 0i32..=4) {
        let g = Grid::from_index(2, 4, 0, Construction::Shift, idx).unwrap();
        let p = [a * fine_side(4), b * fine_side(4)];
        let q = [((a + 5) % 16) * fine_side(4), b * fine_side(4)];
        let x = g.cube_containing(p, la);
        let y = g.cube_containing(q, lb);
        prop_assert!(!x.intersects(&y) || x.contains_cube(&y) || y.contains_cube(&x));
        // children union: 4 disjoint cubes, same volume
        let kids = x.children();
        prop_assert_eq!(kids.len(), 4);
        prop_assert!((kids.iter().map(|c| c.volume()).sum::<f64>() - x.volume()).abs() < 1e-15);
        for c in &kids {
            prop_assert_eq!(g.parent(c).filter(|_| c.level <= 4), if c.level <= 4 { Some(x) } else { None });
        }
    }

    #[test]
    fn deep_embedding_dilates_inside(lk in 0i32..2, rho in 1i32..3, eps in 0.1f64..0.9, idx in 0u128..64) {
        let g = Grid::from_index(1, 7, 0, Construction::Translate, idx).unwrap();
        let k = g.cube_containing([0, 0], lk);
        let gamma = deep_gamma(rho, eps);
        let out = m_deep(&k, rho, eps, &g);
        for j in &out {
            prop_assert!(dilate_within(j, gamma, &k));
            prop_assert!(j.side() <= k.side() / (1 << rho) as f64);
        }
        for (i, a) in out.iter().enumerate() {
            for b in &out[i + 1..] {
                prop_assert!(!a.intersects(b));
            }
        }
    }
}

#[test]
fn deep_embedding_eps_one_is_plain_separation() {
    let g = Grid::standard(1, 6, 0).unwrap();
    let k = cube1(0.0, 0);
    for j in m_deep(&k, 1, 1.0, &g) {
        assert!(distance_to_boundary(&j, &k) >= 2.0 * j.side());
    }
    let out = m_deep(&k, 2, 0.5, &g);
    let beta = overlap_count(&out, deep_gamma(2, 0.5), &k, 6);
    assert!(beta >= 1 && beta < out.len().max(2));
}

#[test]
fn halo_regions() {
    let r = halo_region(&cube1(0.0, 0), [0.25, 0.0]).unwrap();
    let mut b: Vec<(f64, f64)> = r.boxes.iter().map(|b| (b.lo[0], b.hi[0])).collect();
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    assert_eq!(b, vec![(-0.125, 0.125), (0.875, 1.125)]);
    assert!((r.volume() - 0.5).abs() < 1e-15);

    let q = Cube::new(2, 1, [0, 0]);
    let r2 = halo_region(&q, [0.25, 0.125]).unwrap();
    let expected = (1.25 * 1.125 - 0.75 * 0.875) * q.volume();
    assert!((r2.volume() - expected).abs() < 1e-15);
    // lattice count at spacing 2^-8 over the bounding box
    let n = 512;
    let mut count = 0;
    for a in 0..n {
        for c in 0..n {
            let p = [-0.5 + (a as f64 + 0.5) / 256.0, -0.5 + (c as f64 + 0.5) / 256.0];
            if r2.contains_point(p) {
                count += 1;
            }
        }
    }
    assert!((count as f64 / 65536.0 - expected).abs() < 1e-12);
    assert!(halo_region(&q, [0.5, 0.1]).is_err());
}

#[test]
fn bad_probability_degenerate_and_deterministic() {
    let k0 = bad_probability_mc(1, 0, 0.5, 1000, 3);
    assert_eq!(k0.p, 1.0);
    let a = bad_probability_mc(1, 10, 0.5, 2000, 9);
    let b = bad_probability_mc(1, 10, 0.5, 2000, 9);
    assert_eq!(a, b);
    assert!(a.p > 0.0 && a.p < 1.0);
}

#[test]
fn bad_probability_2d_matches_axis_product() {
    let p1 = bad_probability_mc(1, 10, 0.5, 20_000, 21);
    let p2 = bad_probability_mc(2, 10, 0.5, 20_000, 22);
    let predicted = 1.0 - (1.0 - p1.p).powi(2);
    let se = (p2.stderr.powi(2) + (2.0 * (1.0 - p1.p) * p1.stderr).powi(2)).sqrt();
    assert!((p2.p - predicted).abs() <= 4.0 * se, "2D {} vs {predicted} (se {se})", p2.p);
}

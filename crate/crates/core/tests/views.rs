mod support;

use partgroup::views::{hemisphere_directions, CandidateSampling, ViewConfig};
use partgroup::Vec3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn context_view_is_brute_force_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = ViewConfig { resolution: 128, ..Default::default() };
    let mut zoomed = 0;
    for i in 0..12 {
        let mesh = support::random_view_scene(&mut rng);
        let c = support::check_view_selection(&mesh, 0, &cfg);
        assert!(c.argmax_ok, "scene {i}");
        assert!(c.zoom_ok, "scene {i}");
        zoomed += c.zoomed as usize;
    }
    assert!(zoomed > 0 && zoomed < 12, "zoomed in {zoomed} of 12 scenes");
}

#[test]
fn candidates_cover_the_hemisphere() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let axis = support::random_unit(&mut rng);
        for sampling in [CandidateSampling::Fibonacci, CandidateSampling::Seeded(3)] {
            let dirs = hemisphere_directions(axis, 16, sampling);
            assert_eq!(dirs.len(), 16);
            for d in &dirs {
                assert!((d.norm() - 1.0).abs() < 1e-12);
                assert!(d.dot(axis) >= -1e-12);
            }
        }
        let fib = hemisphere_directions(axis, 16, CandidateSampling::Fibonacci);
        assert!((fib[0].dot(axis) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn candidates_rotate_with_the_part() {
    // Rotating the axis about world up rotates every candidate the same way.
    let axis = Vec3::new(0.6, 0.3, 0.2).normalize();
    let rot = partgroup::geom::rotation_axis_angle(Vec3::Y, 1.1);
    let a = hemisphere_directions(axis, 16, CandidateSampling::Fibonacci);
    let b = hemisphere_directions(partgroup::geom::mat_apply(&rot, axis), 16, CandidateSampling::Fibonacci);
    for (x, y) in a.iter().zip(&b) {
        assert!(partgroup::geom::mat_apply(&rot, *x).distance(*y) < 1e-12);
    }
}

use herdsearch::geodesy::{
    action_to_waypoint, ecef_to_enu, ecef_to_geodetic, enu_to_ecef, geodetic_to_ecef, geodetic_to_enu,
    geofence_contains, offset_to_target, polygon_contains, EcefCoord, EnuCoord, GeoFence, GeodeticCoord, WGS84_A,
    WGS84_B,
};
use herdsearch::gridworld::{Action, GridPos};
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = GeodeticCoord> {
    (-90.0f64..=90.0, -180.0f64..180.0, -500.0f64..10_000.0)
        .prop_map(|(lat, lon, alt)| GeodeticCoord::new(lat, lon, alt).unwrap())
}

fn field_coord() -> impl Strategy<Value = GeodeticCoord> {
    (-80.0f64..80.0, -180.0f64..180.0, 0.0f64..200.0).prop_map(|(lat, lon, alt)| GeodeticCoord::new(lat, lon, alt).unwrap())
}

/// Winding number of a closed polygon around `p`.
fn winding(poly: &[(f64, f64)], p: (f64, f64)) -> i32 {
    let n = poly.len();
    let mut wn = 0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let cross = (b.0 - a.0) * (p.1 - a.1) - (p.0 - a.0) * (b.1 - a.1);
        if a.1 <= p.1 {
            if b.1 > p.1 && cross > 0.0 {
                wn += 1;
            }
        } else if b.1 <= p.1 && cross < 0.0 {
            wn -= 1;
        }
    }
    wn
}

fn edge_distance(poly: &[(f64, f64)], p: (f64, f64)) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
            (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Star-shaped, hence simple, polygon from sorted angles.
fn star_polygon() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0f64..std::f64::consts::TAU, 5.0f64..100.0), 3..12).prop_filter_map(
        "distinct angles",
        |mut pts| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pts.windows(2).any(|w| w[1].0 - w[0].0 < 1e-3) {
                return None;
            }
            Some(pts.into_iter().map(|(t, r)| (r * t.cos(), r * t.sin())).collect())
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn geodetic_round_trip(g in coord()) {
        let e = geodetic_to_ecef(&g).unwrap();
        let back = geodetic_to_ecef(&ecef_to_geodetic(&e).unwrap()).unwrap();
        prop_assert!(e.distance(&back) < 1e-6, "{} m", e.distance(&back));
    }

    #[test]
    fn enu_round_trip(r in coord(), e in -5000.0f64..5000.0, n in -5000.0f64..5000.0, u in -300.0f64..300.0) {
        let v = EnuCoord { east: e, north: n, up: u };
        let back = ecef_to_enu(&enu_to_ecef(&v, &r).unwrap(), &r).unwrap();
        prop_assert!((back.east - e).abs() < 1e-7 && (back.north - n).abs() < 1e-7 && (back.up - u).abs() < 1e-7);
    }

    #[test]
    fn enu_preserves_distances(r in coord(), a in coord(), b in coord()) {
        let (ea, eb) = (geodetic_to_ecef(&a).unwrap(), geodetic_to_ecef(&b).unwrap());
        let la = ecef_to_enu(&ea, &r).unwrap();
        let lb = ecef_to_enu(&eb, &r).unwrap();
        let d = ((la.east - lb.east).powi(2) + (la.north - lb.north).powi(2) + (la.up - lb.up).powi(2)).sqrt();
        prop_assert!((d - ea.distance(&eb)).abs() < 1e-6 * (1.0 + d));
    }

    #[test]
    fn offsets_are_antisymmetric(a in field_coord(), de in -500.0f64..500.0, dn in -500.0f64..500.0) {
        let b = herdsearch::geodesy::enu_to_geodetic(&EnuCoord { east: de, north: dn, up: 0.0 }, &a).unwrap();
        let ab = offset_to_target(&a, &b, &a).unwrap();
        let ba = offset_to_target(&b, &a, &a).unwrap();
        prop_assert!((ab.east + ba.east).abs() < 1e-9 && (ab.north + ba.north).abs() < 1e-9);
        prop_assert!((ab.east - de).abs() < 1e-6 && (ab.north - dn).abs() < 1e-6);
    }

    #[test]
    fn waypoints_are_one_cell_away(g in field_coord(), a in 0usize..4, bearing in 0.0f64..360.0) {
        let action = Action::ALL[a];
        let wp = action_to_waypoint(&g, action, 40.0, bearing).unwrap();
        let off = geodetic_to_enu(&wp, &g).unwrap();
        prop_assert!((off.east.hypot(off.north) - 40.0).abs() < 1e-3);
        prop_assert!(off.up.abs() < 1e-3);
        prop_assert_eq!(wp.altitude, g.altitude);
    }

    #[test]
    fn ray_casting_agrees_with_winding_number(poly in star_polygon(), x in -110.0f64..110.0, y in -110.0f64..110.0) {
        prop_assume!(edge_distance(&poly, (x, y)) > 1e-6);
        prop_assert_eq!(polygon_contains(&poly, (x, y)), winding(&poly, (x, y)) != 0);
    }

    #[test]
    fn vertices_and_edges_are_inside(poly in star_polygon(), k in 0usize..12, t in 0.0f64..=1.0) {
        let i = k % poly.len();
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        prop_assert!(polygon_contains(&poly, a));
        let on_edge = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        prop_assert!(edge_distance(&poly, on_edge) < 1e-9);
        prop_assert!(polygon_contains(&poly, on_edge));
    }
}

#[test]
fn reference_points() {
    let e = geodetic_to_ecef(&GeodeticCoord::new(0.0, 0.0, 0.0).unwrap()).unwrap();
    assert_eq!(e, EcefCoord { x: 6378137.0, y: 0.0, z: 0.0 });
    let p = geodetic_to_ecef(&GeodeticCoord::new(90.0, 0.0, 0.0).unwrap()).unwrap();
    assert!((p.z - 6356752.314245).abs() < 1e-6);
    assert!((p.z - WGS84_B).abs() < 1e-9);
    let e = geodetic_to_ecef(&GeodeticCoord::new(0.0, 90.0, 0.0).unwrap()).unwrap();
    assert!(e.x.abs() < 1e-9 && (e.y - WGS84_A).abs() < 1e-9);
}

#[test]
fn short_meridian_arc() {
    // Meridian radius of curvature at the equator is a(1 - e²).
    let a = GeodeticCoord::new(0.0, 0.0, 0.0).unwrap();
    let b = GeodeticCoord::new(0.001, 0.0, 0.0).unwrap();
    let off = offset_to_target(&a, &b, &a).unwrap();
    let m = WGS84_A * (1.0 - herdsearch::geodesy::WGS84_E2);
    let expected = m * 0.001f64.to_radians();
    assert!((off.north - expected).abs() < 1e-3, "{} vs {expected}", off.north);
    assert!(off.east.abs() < 1e-9);
}

#[test]
fn invalid_coordinates_are_rejected() {
    assert!(GeodeticCoord::new(90.5, 0.0, 0.0).is_err());
    assert!(GeodeticCoord::new(f64::NAN, 0.0, 0.0).is_err());
    assert!(GeodeticCoord::new(0.0, 0.0, f64::INFINITY).is_err());
}

#[test]
fn survey_grid_waypoints_stay_inside_the_fence() {
    let origin = GeodeticCoord::new(-27.45, 153.02, 60.0).unwrap();
    let (w, h, cell) = (20usize, 20usize, 40.0);
    // Fence corners a half cell outside the outermost cell centres.
    let corner = |e: f64, n: f64| herdsearch::geodesy::enu_to_geodetic(&EnuCoord { east: e, north: n, up: 0.0 }, &origin).unwrap();
    let half = cell / 2.0;
    let fence = GeoFence::new(vec![
        corner(-half, half),
        corner(w as f64 * cell - half, half),
        corner(w as f64 * cell - half, -(h as f64) * cell + half),
        corner(-half, -(h as f64) * cell + half),
    ])
    .unwrap();
    let mut here = origin;
    let mut pos = GridPos::new(0, 0);
    let mut visited = 0;
    for row in 0..h {
        let a = if row % 2 == 0 { Action::E } else { Action::W };
        for _ in 1..w {
            here = action_to_waypoint(&here, a, cell, 0.0).unwrap();
            pos = pos.step(a, w, h).unwrap();
            assert!(geofence_contains(&fence, &here, &origin).unwrap(), "{pos:?}");
            visited += 1;
        }
        if row + 1 < h {
            here = action_to_waypoint(&here, Action::S, cell, 0.0).unwrap();
            pos = pos.step(Action::S, w, h).unwrap();
            assert!(geofence_contains(&fence, &here, &origin).unwrap());
            visited += 1;
        }
    }
    assert_eq!(visited, w * h - 1);
    let off = geodetic_to_enu(&here, &origin).unwrap();
    // Each hop uses its own tangent frame, so centimetres accumulate over the sweep.
    assert!(off.east.abs() < 0.1 && (off.north + (h as f64 - 1.0) * cell).abs() < 0.1, "{off}");
    let outside = action_to_waypoint(&here, Action::S, cell, 0.0).unwrap();
    assert!(!geofence_contains(&fence, &outside, &origin).unwrap());
}

#[test]
fn fence_parse_round_trip() {
    let text = "# paddock\n-27.450,153.020\n-27.450,153.030\n-27.460,153.030\n";
    let fence = GeoFence::parse(text.as_bytes()).unwrap();
    assert_eq!(fence.vertices.len(), 3);
    assert!(GeoFence::parse("-27.45,153.02\n-27.46,153.03\n".as_bytes()).is_err());
    assert!(GeoFence::parse("x,y\n1,2\n3,4\n".as_bytes()).is_err());
}

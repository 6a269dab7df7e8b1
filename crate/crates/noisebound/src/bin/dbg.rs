use noisebound::dynamics::*;
use noisebound::engine::*;
use std::time::Instant;

fn main() {
    let map = HenonMap;
    let g = GridSpec::new(Point2::new(-2.5, -2.5), Point2::new(2.5, 2.5), 12).unwrap();
    let p = Params { a: 0.6, b: 0.3, eps: 0.0625 };
    let s = SamplingSpec { k: 3, bloat: Some(0.0) };

    // manual iteration with progress
    let tail = deterministic_orbit(&map, Point2::new(0.5, 0.2), &p, 100, g.bounds()).unwrap();
    let z = *tail.last().unwrap();
    let mut set = BoxSet::empty(g);
    let (ix, iy) = g.locate(z);
    set.insert(ix, iy);
    let t0 = Instant::now();
    let mut prev_len = 0;
    for k in 0..400 {
        let next = image_cover(&set, &p, &map, &s);
        let l = next.boxes.len();
        if k % 20 == 0 {
            eprintln!("round {k}: {} boxes, {} comps, elapsed {:.1?}", l, next.boxes.component_count(), t0.elapsed());
        }
        if l == prev_len && next.boxes == set {
            eprintln!("fixed at round {k}: {} boxes {} comps", l, next.boxes.component_count());
            break;
        }
        prev_len = set.len();
        set = next.boxes;
    }
    eprintln!("total {:.1?}", t0.elapsed());
}

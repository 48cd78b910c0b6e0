use crate::synthdata::MaskGrid;

/// 4-connected foreground components. Each component is a sorted list of
/// row-major pixel indices; components are ordered by their minimum index,
/// so the result is independent of iteration order.
pub fn connected_components(mask: &MaskGrid) -> Vec<Vec<usize>> {
    let (h, w) = (mask.h, mask.w);
    let mut visited = vec![false; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if mask.pixels[start] != 1 || visited[start] {
            continue;
        }
        let mut comp = Vec::new();
        visited[start] = true;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            comp.push(idx);
            let (r, c) = (idx / w, idx % w);
            let mut visit = |nr: usize, nc: usize, stack: &mut Vec<usize>| {
                let ni = nr * w + nc;
                if mask.pixels[ni] == 1 && !visited[ni] {
                    visited[ni] = true;
                    stack.push(ni);
                }
            };
            if r > 0 {
                visit(r - 1, c, &mut stack);
            }
            if r + 1 < h {
                visit(r + 1, c, &mut stack);
            }
            if c > 0 {
                visit(r, c - 1, &mut stack);
            }
            if c + 1 < w {
                visit(r, c + 1, &mut stack);
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    // scan order already yields min-index ordering; keep it explicit
    out.sort_by_key(|c| c[0]);
    out
}

//! Structure-aware self-attention mask over table positions.
//!
//! Rules, unioned:
//! * R1 header tokens attend each other;
//! * R2 header tokens attend every trigger token (one-way unless
//!   `symmetric_header_trigger`);
//! * R3 a role mention and the slots of its column attend each other, with
//!   the mention tokens as hub (slot to slot stays closed);
//! * R4 a trigger and the slots of its row attend each other, with the
//!   trigger tokens as hub.
//!
//! Every position may attend itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{CellKind, SlottedTable};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskOptions {
    pub symmetric_header_trigger: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructureMask {
    n: usize,
    allowed: Vec<bool>,
}

impl StructureMask {
    pub fn full(n: usize) -> Self {
        StructureMask {
            n,
            allowed: vec![true; n * n],
        }
    }

    pub fn diagonal(n: usize) -> Self {
        let mut m = StructureMask {
            n,
            allowed: vec![false; n * n],
        };
        for p in 0..n {
            m.set(p, p);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Whether query `q` may attend key `k`.
    pub fn get(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.n + k]
    }

    fn set(&mut self, q: usize, k: usize) {
        self.allowed[q * self.n + k] = true;
    }

    pub fn count_allowed(&self) -> usize {
        self.allowed.iter().filter(|&&b| b).count()
    }

    /// Row-major flags.
    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }

    /// Row-major bits, most significant bit first within each byte, the last
    /// byte zero-padded.
    pub fn to_packed(&self) -> Vec<u8> {
        let mut out = vec![0u8; (self.n * self.n).div_ceil(8)];
        for (i, _) in self.allowed.iter().enumerate().filter(|(_, &b)| b) {
            out[i / 8] |= 0x80 >> (i % 8);
        }
        out
    }

    pub fn from_packed(n: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != (n * n).div_ceil(8) {
            return Err(Error::Shape(format!(
                "{} packed bytes for a {n}x{n} mask",
                bytes.len()
            )));
        }
        let allowed = (0..n * n).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0).collect();
        Ok(StructureMask { n, allowed })
    }
}

fn hub_block(m: &mut StructureMask, hub: &[usize], spokes: &[usize]) {
    for &a in hub {
        for &b in hub.iter().chain(spokes) {
            m.set(a, b);
            m.set(b, a);
        }
    }
    for &s in spokes {
        m.set(s, s);
    }
}

pub fn build_structure_mask(table: &SlottedTable, opts: MaskOptions) -> Result<StructureMask> {
    let n = table.header.len + table.rows.iter().map(|r| r.trigger.len() + r.slots.len()).sum::<usize>();
    if table.layout.len() < n {
        return Err(Error::LayoutGap(table.layout.len()));
    }
    if table.layout.len() > n {
        return Err(Error::LayoutGap(n));
    }
    for (p, kind) in table.layout.iter().enumerate() {
        let ok = match *kind {
            CellKind::HeaderRole { .. } | CellKind::HeaderOther { .. } => p < table.header.len,
            CellKind::Trigger { row } => table.rows.get(row).is_some_and(|r| r.trigger.contains(&p)),
            CellKind::Slot { row, column } => table
                .rows
                .get(row)
                .is_some_and(|r| r.slots.iter().any(|s| s.position == p && s.column == column)),
        };
        if !ok {
            return Err(Error::LayoutGap(p));
        }
    }

    let mut m = StructureMask {
        n,
        allowed: vec![false; n * n],
    };
    let header: Vec<usize> = (0..table.header.len).collect();
    let triggers: Vec<usize> = table.rows.iter().flat_map(|r| r.trigger.clone()).collect();
    for &q in &header {
        for &k in header.iter().chain(&triggers) {
            m.set(q, k);
            if opts.symmetric_header_trigger {
                m.set(k, q);
            }
        }
    }
    for (c, col) in table.header.columns.iter().enumerate() {
        let hub: Vec<usize> = col.tokens.clone().collect();
        let spokes: Vec<usize> = table.slots().filter(|s| s.column == c).map(|s| s.position).collect();
        hub_block(&mut m, &hub, &spokes);
    }
    for row in &table.rows {
        let hub: Vec<usize> = row.trigger.clone().collect();
        let spokes: Vec<usize> = row.slots.iter().map(|s| s.position).collect();
        hub_block(&mut m, &hub, &spokes);
    }
    for p in 0..n {
        m.set(p, p);
    }
    Ok(m)
}

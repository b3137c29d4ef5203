//! Reference Lagrange elements `Q_k` and the queries the enumeration needs:
//! per-entity DoF counts, exact support points, unification and dominance.

use num_rational::Ratio;
use num_traits::{One, Zero};

use crate::error::ElementError;

/// Exact rational arithmetic for support points and constraint weights.
pub type Rational = Ratio<i128>;

/// Position of an element in an [`ElementCollection`].
pub type FeIndex = usize;

pub const MIN_DEGREE: u32 = 1;
pub const MAX_DEGREE: u32 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EntityKind {
    Vertex,
    Edge,
    Interior,
}

/// Tensor-product Lagrange element on equispaced nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LagrangeElement {
    degree: u32,
}

impl LagrangeElement {
    pub fn new(degree: u32) -> Result<Self, ElementError> {
        if !(MIN_DEGREE..=MAX_DEGREE).contains(&degree) {
            return Err(ElementError::UnsupportedDegree(degree));
        }
        Ok(LagrangeElement { degree })
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn dofs_per_vertex(&self) -> usize {
        1
    }

    pub fn dofs_per_edge(&self) -> usize {
        self.degree as usize - 1
    }

    pub fn dofs_per_interior(&self) -> usize {
        (self.degree as usize - 1).pow(2)
    }

    pub fn dofs_per_cell(&self) -> usize {
        (self.degree as usize + 1).pow(2)
    }

    pub fn dofs_per_entity(&self, kind: EntityKind) -> usize {
        match kind {
            EntityKind::Vertex => self.dofs_per_vertex(),
            EntityKind::Edge => self.dofs_per_edge(),
            EntityKind::Interior => self.dofs_per_interior(),
        }
    }

    /// Interior edge nodes `j/k`, `j = 1..k-1`, in canonical orientation.
    pub fn edge_support_points(&self) -> Vec<Rational> {
        (1..self.degree).map(|j| Rational::new(j as i128, self.degree as i128)).collect()
    }

    /// All 1D nodes `0, 1/k, ..., 1`.
    pub fn nodes_1d(&self) -> Vec<Rational> {
        (0..=self.degree).map(|j| Rational::new(j as i128, self.degree as i128)).collect()
    }

    /// Support points on the unit square in cell-local DoF order: the four
    /// vertices, then each line's interior nodes running from its first to
    /// its second vertex, then the interior nodes row by row.
    pub fn cell_support_points(&self) -> Vec<(Rational, Rational)> {
        let (zero, one) = (Rational::zero(), Rational::one());
        let corners = [(zero, zero), (one, zero), (zero, one), (one, one)];
        let inner = self.edge_support_points();
        let mut pts = corners.to_vec();
        for [a, b] in LINE_CORNERS {
            let (pa, pb) = (corners[a], corners[b]);
            for t in &inner {
                pts.push((pa.0 + (pb.0 - pa.0) * t, pa.1 + (pb.1 - pa.1) * t));
            }
        }
        for y in &inner {
            for x in &inner {
                pts.push((*x, *y));
            }
        }
        pts
    }
}

const LINE_CORNERS: [[usize; 2]; 4] = [[0, 2], [1, 3], [0, 1], [2, 3]];

/// Ordered collection of elements; the active FE index is the position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ElementCollection {
    elements: Vec<LagrangeElement>,
}

impl ElementCollection {
    pub fn new(degrees: impl IntoIterator<Item = u32>) -> Result<Self, ElementError> {
        let elements = degrees.into_iter().map(LagrangeElement::new).collect::<Result<Vec<_>, _>>()?;
        if elements.is_empty() {
            return Err(ElementError::Empty);
        }
        if elements.windows(2).any(|w| w[0].degree >= w[1].degree) {
            return Err(ElementError::NotIncreasing);
        }
        Ok(ElementCollection { elements })
    }

    /// `Q_min, ..., Q_max`.
    pub fn range(min: u32, max: u32) -> Result<Self, ElementError> {
        Self::new(min..=max)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn get(&self, i: FeIndex) -> Result<&LagrangeElement, ElementError> {
        self.elements.get(i).ok_or(ElementError::UnknownIndex(i))
    }

    pub fn degree(&self, i: FeIndex) -> Result<u32, ElementError> {
        Ok(self.get(i)?.degree)
    }

    pub fn index_of_degree(&self, degree: u32) -> Option<FeIndex> {
        self.elements.iter().position(|e| e.degree == degree)
    }

    pub fn degrees(&self) -> impl Iterator<Item = u32> + '_ {
        self.elements.iter().map(|e| e.degree)
    }

    pub fn dofs_per_entity(&self, i: FeIndex, kind: EntityKind) -> Result<usize, ElementError> {
        Ok(self.get(i)?.dofs_per_entity(kind))
    }

    pub fn dofs_per_cell(&self, i: FeIndex) -> Result<usize, ElementError> {
        Ok(self.get(i)?.dofs_per_cell())
    }

    /// Pairs of edge slots `(a, b)` (0-based, canonical orientation) whose
    /// support points coincide exactly: `(a+1)/kA == (b+1)/kB`.
    pub fn unification_pairs(&self, ia: FeIndex, ib: FeIndex) -> Result<Vec<(usize, usize)>, ElementError> {
        let (ka, kb) = (self.degree(ia)? as usize, self.degree(ib)? as usize);
        let mut pairs = Vec::new();
        for a in 1..ka {
            // a/ka == b/kb  <=>  a*kb == b*ka
            if (a * kb) % ka == 0 {
                pairs.push((a - 1, a * kb / ka - 1));
            }
        }
        Ok(pairs)
    }

    /// The element whose trace space is common to both, i.e. the lower degree.
    pub fn dominating_index(&self, ia: FeIndex, ib: FeIndex) -> Result<FeIndex, ElementError> {
        let (ka, kb) = (self.degree(ia)?, self.degree(ib)?);
        Ok(if ka <= kb { ia } else { ib })
    }
}

/// Values of the 1D Lagrange basis on `nodes` at `x`.
pub fn lagrange_basis(nodes: &[Rational], x: Rational) -> Vec<Rational> {
    (0..nodes.len())
        .map(|i| {
            nodes
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .fold(Rational::one(), |acc, (_, xj)| acc * (x - xj) / (nodes[i] - xj))
        })
        .collect()
}

/// True when `row` is a unit vector.
pub fn is_unit_row(row: &[Rational]) -> bool {
    row.iter().filter(|c| !c.is_zero()).count() == 1 && row.iter().any(|c| c.is_one())
}

use crate::data::spec::*;
use crate::error::{Error, Result};
use crate::gradfilters::LabelMap;

/// Total map from raw class ids onto a dense range of clustered ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassClustering {
    mapping: Vec<u32>,
    clustered_count: usize,
}

/// Raw ids of a 30-class street-scene taxonomy and the 8 categories they
/// fold into. Ids follow the common urban-scene ordering.
const RAW_30_TO_8: [(&str, u32); 30] = [
    ("road", ROAD),
    ("sidewalk", SIDEWALK),
    ("parking", ROAD),
    ("rail track", ROAD),
    ("building", CONSTRUCTION),
    ("wall", CONSTRUCTION),
    ("fence", CONSTRUCTION),
    ("guard rail", CONSTRUCTION),
    ("bridge", CONSTRUCTION),
    ("tunnel", CONSTRUCTION),
    ("pole", POLE),
    ("pole group", POLE),
    ("traffic light", POLE),
    ("traffic sign", POLE),
    ("vegetation", VEGETATION),
    ("terrain", VEGETATION),
    ("sky", SKY),
    ("person", PERSON),
    ("rider", PERSON),
    ("car", VEHICLE),
    ("truck", VEHICLE),
    ("bus", VEHICLE),
    ("caravan", VEHICLE),
    ("trailer", VEHICLE),
    ("train", VEHICLE),
    ("motorcycle", VEHICLE),
    ("bicycle", VEHICLE),
    ("ground", SIDEWALK),
    ("dynamic", PERSON),
    ("static", CONSTRUCTION),
];

impl ClassClustering {
    /// `mapping[raw] = clustered`; every id in `0..clustered_count` must be hit.
    pub fn new(mapping: Vec<u32>, clustered_count: usize) -> Result<Self> {
        let mut hit = vec![false; clustered_count];
        for (raw, &c) in mapping.iter().enumerate() {
            match hit.get_mut(c as usize) {
                Some(h) => *h = true,
                None => {
                    return Err(Error::invalid(
                        "class_clustering",
                        format!("raw id {raw} maps to {c}, outside 0..{clustered_count}"),
                    ))
                }
            }
        }
        if let Some(gap) = hit.iter().position(|h| !h) {
            return Err(Error::invalid(
                "class_clustering",
                format!("clustered id {gap} has no raw id mapped to it"),
            ));
        }
        Ok(Self {
            mapping,
            clustered_count,
        })
    }

    pub fn identity(count: usize) -> Self {
        Self {
            mapping: (0..count as u32).collect(),
            clustered_count: count,
        }
    }

    /// The built-in 30 → 8 street-scene table.
    pub fn street_30_to_8() -> Self {
        Self::new(RAW_30_TO_8.iter().map(|&(_, c)| c).collect(), 8).expect("table is dense")
    }

    /// Names of the raw classes of [`ClassClustering::street_30_to_8`].
    pub fn street_raw_names() -> impl Iterator<Item = &'static str> {
        RAW_30_TO_8.iter().map(|&(n, _)| n)
    }

    pub fn mapping(&self) -> &[u32] {
        &self.mapping
    }

    pub fn raw_count(&self) -> usize {
        self.mapping.len()
    }

    pub fn clustered_count(&self) -> usize {
        self.clustered_count
    }
}

pub fn cluster_labels(labels: &LabelMap, c: &ClassClustering) -> Result<LabelMap> {
    let values = labels
        .values()
        .iter()
        .map(|&v| {
            c.mapping.get(v as usize).copied().ok_or(Error::LabelOutOfRange {
                value: v,
                num_classes: c.raw_count(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LabelMap::new(labels.batch(), labels.height(), labels.width(), c.clustered_count, values)
}

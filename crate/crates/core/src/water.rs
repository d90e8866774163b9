//! Water lending between farmers.
//!
//! Type3 lenders pick one crop for all the Type1 farmers they serve so that
//! the locality produces enough of it for collectors to come; the water agent
//! sells water at a unit price and does not care what is grown.

use serde::{Deserialize, Serialize};

use crate::domain::CropIdx;

/// A Type1 farmer's application for water: for every crop it could plant,
/// the water it would need, the produce it expects and the land it would use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterRequest {
    pub farmer_id: u32,
    pub water_requirement: Vec<f64>,
    pub estimated_produce: Vec<f64>,
    pub land_willing: Vec<f64>,
}

impl WaterRequest {
    /// True when the farmer listed the crop.
    pub fn applies_for(&self, crop: CropIdx) -> bool {
        self.water_requirement.get(crop).is_some_and(|w| *w > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Payment {
    /// Fraction of each harvest handed to the lender.
    ProduceShare(f64),
    /// Price per unit of water per step.
    UnitPrice(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterAllocation {
    pub farmer_id: u32,
    /// Crop the lender dictates, if any.
    pub crop: Option<CropIdx>,
    pub volume: f64,
    /// Estimated produce prorated by the water fraction received.
    pub produce: f64,
    pub payment: Payment,
}

/// What a lender knows about one crop when choosing what to dictate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropOffer<'a> {
    pub crop: CropIdx,
    pub id: &'a str,
    pub price: f64,
    pub produce: f64,
    pub minimum_produce: f64,
}

/// Crops in the lender's order of preference: descending price times
/// produce, ties by crop id.
pub fn crop_priority<'a>(crops: &[CropOffer<'a>]) -> Vec<CropOffer<'a>> {
    let mut out = crops.to_vec();
    out.sort_by(|a, b| {
        (b.price * b.produce)
            .total_cmp(&(a.price * a.produce))
            .then_with(|| a.id.cmp(b.id))
    });
    out
}

/// Allocates a lender's water, dictating a single crop.
///
/// Crops are tried in order of preference. For each, applicants are served
/// largest expected produce first, each in full while water lasts and the
/// last one partially. The first crop whose served produce reaches its
/// minimum wins; otherwise nothing is allocated. Crops nobody applied for
/// are skipped. `share_factor` scales the produce share owed to the lender
/// by the fraction of the farmer's requirement that was lent.
pub fn allocate_with_crop(
    available_water: f64,
    requests: &[WaterRequest],
    crops: &[CropOffer<'_>],
    share_factor: f64,
) -> Vec<WaterAllocation> {
    if requests.is_empty() || available_water <= 0.0 {
        return Vec::new();
    }
    for offer in crop_priority(crops) {
        let i = offer.crop;
        let mut order: Vec<&WaterRequest> = requests.iter().filter(|r| r.applies_for(i)).collect();
        if order.is_empty() {
            continue;
        }
        order.sort_by(|a, b| {
            b.estimated_produce[i]
                .total_cmp(&a.estimated_produce[i])
                .then_with(|| a.farmer_id.cmp(&b.farmer_id))
        });

        let mut water = available_water;
        let mut produce_sum = 0.0;
        let mut allocation = Vec::new();
        for r in order {
            if water <= 0.0 {
                break;
            }
            let need = r.water_requirement[i];
            let (volume, produce) = if need <= water {
                (need, r.estimated_produce[i])
            } else {
                (water, r.estimated_produce[i] * water / need)
            };
            water -= volume;
            produce_sum += produce;
            allocation.push(WaterAllocation {
                farmer_id: r.farmer_id,
                crop: Some(i),
                volume,
                produce,
                payment: Payment::ProduceShare(share_factor * volume / need),
            });
        }
        if produce_sum >= offer.minimum_produce {
            return allocation;
        }
    }
    Vec::new()
}

/// A Type3 lender's remaining water and what it has already committed.
#[derive(Debug, Clone, PartialEq)]
pub struct LenderPool {
    pub lender_id: u32,
    pub available_water: f64,
    /// Produce already promised to this lender's dictated crops, per crop.
    pub committed_produce: Vec<f64>,
}

/// Second allocation round for farmers left without water.
///
/// Each lender in turn re-runs [`allocate_with_crop`] over the farmers still
/// unserved, with every crop's minimum reduced by the produce the lender has
/// already committed to it. Lenders' pools are drawn down in place.
pub fn reallocate_round(
    lenders: &mut [LenderPool],
    unserved: &[WaterRequest],
    crops: &[CropOffer<'_>],
    share_factor: f64,
) -> Vec<(u32, WaterAllocation)> {
    let mut remaining: Vec<WaterRequest> = unserved.to_vec();
    let mut out = Vec::new();
    for pool in lenders.iter_mut() {
        if remaining.is_empty() {
            break;
        }
        if pool.available_water <= 0.0 {
            continue;
        }
        let adjusted: Vec<CropOffer<'_>> = crops
            .iter()
            .map(|c| CropOffer {
                minimum_produce: (c.minimum_produce
                    - pool.committed_produce.get(c.crop).copied().unwrap_or(0.0))
                .max(0.0),
                ..*c
            })
            .collect();
        let allocation = allocate_with_crop(pool.available_water, &remaining, &adjusted, share_factor);
        for a in &allocation {
            pool.available_water -= a.volume;
            if let Some(c) = a.crop {
                if let Some(slot) = pool.committed_produce.get_mut(c) {
                    *slot += a.produce;
                }
            }
        }
        pool.available_water = pool.available_water.max(0.0);
        remaining.retain(|r| !allocation.iter().any(|a| a.farmer_id == r.farmer_id));
        out.extend(allocation.into_iter().map(|a| (pool.lender_id, a)));
    }
    out
}

/// Sells water at `unit_price` in ascending farmer-id order until it runs
/// out. `requests` holds (farmer id, volume wanted).
pub fn water_agent_allocate(
    available_water: f64,
    requests: &[(u32, f64)],
    unit_price: f64,
) -> Vec<WaterAllocation> {
    let mut order: Vec<(u32, f64)> = requests.iter().copied().filter(|r| r.1 > 0.0).collect();
    order.sort_by_key(|r| r.0);
    let mut water = available_water.max(0.0);
    let mut out = Vec::new();
    for (farmer_id, want) in order {
        if water <= 0.0 {
            break;
        }
        let volume = want.min(water);
        water -= volume;
        out.push(WaterAllocation {
            farmer_id,
            crop: None,
            volume,
            produce: 0.0,
            payment: Payment::UnitPrice(unit_price),
        });
    }
    out
}

//! A Type3 lender with 250 units of water and three Type1 applicants.
//! Cane pays more, but the lender dictates fruit when the cane applicants
//! cannot reach the collectors' minimum.

use canesim::water::{allocate_with_crop, CropOffer, WaterRequest};

fn main() {
    let requests = vec![
        WaterRequest {
            farmer_id: 1,
            water_requirement: vec![150.0, 80.0],
            estimated_produce: vec![100.0, 10.0],
            land_willing: vec![1.5, 1.5],
        },
        WaterRequest {
            farmer_id: 2,
            water_requirement: vec![150.0, 80.0],
            estimated_produce: vec![90.0, 12.0],
            land_willing: vec![1.5, 1.5],
        },
        WaterRequest {
            farmer_id: 3,
            water_requirement: vec![0.0, 90.0],
            estimated_produce: vec![0.0, 11.0],
            land_willing: vec![0.0, 1.2],
        },
    ];
    for cane_minimum in [150.0, 400.0] {
        let crops = [
            CropOffer { crop: 0, id: "sugarcane", price: 300.0, produce: 100.0, minimum_produce: cane_minimum },
            CropOffer { crop: 1, id: "fruit", price: 2000.0, produce: 10.0, minimum_produce: 20.0 },
        ];
        println!("cane minimum {cane_minimum}:");
        for a in allocate_with_crop(250.0, &requests, &crops, 0.25) {
            println!(
                "  farmer {} gets {:>5.1} water for crop {:?}, produce {:>6.2}, pays {:?}",
                a.farmer_id, a.volume, a.crop, a.produce, a.payment
            );
        }
    }
}

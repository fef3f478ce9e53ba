//! Cluster accuracy under the best one-to-one relabeling.

use igcd::eval::{clustering_accuracy, max_weight_assignment};

fn main() -> igcd::Result<()> {
    let truth = ["cat", "cat", "dog", "dog", "dog", "owl"];
    let pred = [7, 7, 3, 3, 7, 9];
    let (acc, map) = clustering_accuracy(&pred, &truth)?;
    println!("accuracy {acc:.3} with {map:?}");

    // More clusters than classes: the extra cluster stays unmatched.
    let (acc, map) = clustering_accuracy(&[0, 1, 2, 2], &['a', 'a', 'b', 'b'])?;
    println!("accuracy {acc:.3} with {map:?}");

    let w = vec![vec![4, 1, 3], vec![2, 0, 5], vec![3, 2, 2]];
    println!("assignment {:?}", max_weight_assignment(&w));
    Ok(())
}

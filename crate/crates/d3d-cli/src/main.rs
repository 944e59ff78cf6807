fn main() {
    println!("d3d");
}

fn main() {
    println!("cafpo");
}

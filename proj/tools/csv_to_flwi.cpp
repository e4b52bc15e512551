// Converts comma-separated pixel rows into the raw FLWI image dataset format.
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "cflow/datasets.hpp"
#include "cflow/error.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Convert a CSV of images (one per line, channel-last) to FLWI", "csv_to_flwi"};
  std::string input;
  std::string output;
  cflow::ImageShape shape{8, 8, 1};
  app.add_option("input", input, "CSV file")->required()->check(CLI::ExistingFile);
  app.add_option("output", output, "FLWI file to write")->required();
  app.add_option("--height", shape.height, "Image height")->check(CLI::PositiveNumber);
  app.add_option("--width", shape.width, "Image width")->check(CLI::PositiveNumber);
  app.add_option("--channels", shape.channels, "Channels per pixel")->check(CLI::PositiveNumber);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    std::ifstream in(input);
    const cflow::Dataset data = cflow::import_csv_images(in, shape);
    cflow::save_image_dataset(data, output);
    std::cout << "csv_to_flwi: " << data.size() << " images of " << shape.height << "x" << shape.width << "x"
              << shape.channels << " -> " << output << '\n';
  } catch (const cflow::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

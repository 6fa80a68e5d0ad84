#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tabforge/table/csv.hpp"
#include "toy_data.hpp"

// Writes one of the bundled toy tables plus its schema.
int main(int argc, char** argv) {
  CLI::App app{"Generate a toy table"};
  std::string kind = "mixture";
  std::size_t rows = 500;
  std::uint64_t seed = 1;
  double rho = 0.9;
  std::string out;
  std::string schema_out;
  app.add_option("--kind", kind, "mixture or bivariate")->check(CLI::IsMember({"mixture", "bivariate"}));
  app.add_option("--rows", rows, "Row count");
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--rho", rho, "Correlation of the bivariate table");
  app.add_option("--out", out, "CSV output")->required();
  app.add_option("--schema-out", schema_out, "Schema JSON output");
  CLI11_PARSE(app, argc, argv);

  const auto table = kind == "mixture" ? tabforge::toy::mixture_table(rows, seed)
                                       : tabforge::toy::bivariate_table(rows, rho, seed);
  tabforge::table::save_csv(out, table);
  if (!schema_out.empty()) {
    std::ofstream s(schema_out);
    s << table.schema().to_json().dump(2) << '\n';
  }
  return 0;
}

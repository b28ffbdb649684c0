#include <optional>
#include <sstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "streetshop/binary_io.hpp"
#include "streetshop/cli.hpp"
#include "streetshop/data.hpp"
#include "streetshop/eval.hpp"
#include "streetshop/image.hpp"
#include "streetshop/index.hpp"
#include "streetshop/pipeline.hpp"

namespace py = pybind11;
using namespace streetshop;

namespace {

py::dict match_dict(const index::RankedMatch& m) {
  py::dict d;
  d["rank"] = m.rank;
  d["product_id"] = m.product_id;
  d["image_id"] = m.image_id;
  d["category"] = m.category;
  d["score"] = m.score;
  return d;
}

py::list matches_list(const std::vector<index::RankedMatch>& matches) {
  py::list out;
  for (const auto& m : matches) out.append(match_dict(m));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Street photo to shop product search";

  static py::object error_type = py::exception<Error>(m, "StreetshopError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = error_type(e.what());
      exc.attr("code") = py::str(std::string(error_code_name(e.code())));
      exc.attr("ids") = py::cast(e.ids());
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  m.def(
      "synthesize",
      [](const std::filesystem::path& out, int products, std::uint64_t seed, int street_per_product) {
        data::SyntheticOptions options;
        options.street_per_product = street_per_product;
        const auto manifest = data::generate_synthetic_paired_dataset(products, seed, out, options);
        return py::make_tuple(out / "paired.tsv", manifest.products().size(), manifest.pairs().size());
      },
      py::arg("out"), py::arg("products"), py::arg("seed") = 0, py::arg("street_per_product") = 4,
      "Render a synthetic paired dataset; returns (manifest path, products, street images).");

  m.def(
      "ingest",
      [](const std::filesystem::path& manifest, const std::filesystem::path& out, int images_per_product,
         std::uint64_t seed, double train_fraction) {
        const auto r = data::ingest(data::load_manifest(manifest), out, images_per_product, seed, train_fraction);
        py::dict d;
        d["products"] = r.catalog.products().size();
        d["images"] = r.catalog.image_count();
        d["train_products"] = r.train.products().size();
        d["test_products"] = r.test.products().size();
        return d;
      },
      py::arg("manifest"), py::arg("out"), py::arg("images_per_product") = 8, py::arg("seed") = 0,
      py::arg("train_fraction") = 0.8);

  m.def(
      "precision_at_k", [](const std::vector<int>& judgments, int k) { return eval::precision_at_k(judgments, k); },
      py::arg("judgments"), py::arg("k"));

  py::class_<index::EmbeddingIndex>(m, "Index")
      .def_static("load", &index::load_index, py::arg("path"))
      .def("__len__", &index::EmbeddingIndex::size)
      .def_property_readonly("dim", &index::EmbeddingIndex::dim)
      .def_property_readonly("product_ids", &index::EmbeddingIndex::product_ids)
      .def_property_readonly("fingerprint",
                             [](const index::EmbeddingIndex& i) { return io::to_hex(i.fingerprint()); })
      .def(
          "query",
          [](const index::EmbeddingIndex& i, const std::vector<float>& vector, int k, bool dedupe) {
            return matches_list(index::query(i, vector, k, {dedupe}));
          },
          py::arg("vector"), py::arg("k"), py::arg("dedupe_products") = true);

  py::class_<Pipeline, std::shared_ptr<Pipeline>>(m, "Pipeline")
      .def(py::init([](const std::filesystem::path& embedder, const std::filesystem::path& index,
                       const std::optional<std::filesystem::path>& gan,
                       const std::optional<std::filesystem::path>& catalog) {
             return std::const_pointer_cast<Pipeline>(
                 Pipeline::load({gan.value_or(""), embedder, index, catalog.value_or("")}));
           }),
           py::arg("embedder"), py::arg("index"), py::arg("gan") = py::none(), py::arg("catalog") = py::none())
      .def_property_readonly("has_converter", &Pipeline::has_converter)
      .def_property_readonly("fingerprint_matches", &Pipeline::fingerprint_matches)
      .def(
          "query",
          [](const Pipeline& p, py::bytes photo, int k, bool dedupe) {
            const std::string bytes = photo;
            PipelineResult r;
            {
              py::gil_scoped_release release;
              r = p.run_bytes(bytes, k, dedupe);
            }
            return matches_list(r.matches);
          },
          py::arg("photo"), py::arg("k") = 10, py::arg("dedupe_products") = true,
          "Rank catalog products for encoded photo bytes.")
      .def(
          "garment_png",
          [](const Pipeline& p, py::bytes photo) -> py::object {
            const std::string bytes = photo;
            const auto r = p.run_bytes(bytes, 1);
            if (!r.garment) return py::none();
            return py::bytes(encode_png(tensor_to_image(*r.garment, 0)));
          },
          py::arg("photo"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run one command line; returns (exit code, stdout, stderr).");
}

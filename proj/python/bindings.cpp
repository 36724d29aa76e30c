// Copyright (c) 2026, The neuroalign authors
// SPDX-License-Identifier: Apache-2.0
//
// pybind11 module: config hashing, synthetic data, training runs, retrieval
// scoring, image metrics and PGM/PPM I/O. Arrays cross as NumPy float32.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "neuroalign/config.hpp"
#include "neuroalign/dataset.hpp"
#include "neuroalign/error.hpp"
#include "neuroalign/foveation.hpp"
#include "neuroalign/image.hpp"
#include "neuroalign/metrics.hpp"
#include "neuroalign/pipeline.hpp"
#include "neuroalign/report.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace neuroalign;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
    if (a.ndim() != 2) {
        throw ContractError("expected a 2-D array");
    }
    const auto n = static_cast<std::size_t>(a.shape(0)), d = static_cast<std::size_t>(a.shape(1));
    return Tensor({n, d}, std::vector<float>(a.data(), a.data() + n * d));
}

ImageBuffer to_image(const FloatArray& a) {
    if (a.ndim() != 2 && !(a.ndim() == 3 && a.shape(2) == 3)) {
        throw ContractError("expected an [h, w] or [h, w, 3] array");
    }
    const auto h = static_cast<std::size_t>(a.shape(0)), w = static_cast<std::size_t>(a.shape(1));
    const std::size_t c = a.ndim() == 3 ? 3 : 1;
    ImageBuffer img(w, h, c, std::vector<float>(a.data(), a.data() + w * h * c));
    img.validate();
    return img;
}

FloatArray from_image(const ImageBuffer& img) {
    std::vector<py::ssize_t> shape{py::ssize_t(img.height), py::ssize_t(img.width)};
    if (img.channels == 3) {
        shape.push_back(3);
    }
    FloatArray out(shape);
    std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
    return out;
}

py::dict report_dict(const RetrievalReport& r) {
    py::dict d;
    d["modality"] = std::string(modality_name(r.modality));
    d["top1"] = r.top1;
    d["top5"] = r.top5;
    d["n_queries"] = r.n_queries;
    d["n_gallery"] = r.n_gallery;
    d["ranks"] = r.ranks;
    d["tags"] = r.tags;
    return d;
}

// Trains the three stages and writes the checkpoint and JSON report into
// out_dir, as the CLI's train subcommand does.
py::dict train(const std::string& config_text, const fs::path& out_dir, std::size_t threads) {
    const auto cfg = parse_config(config_text);
    const auto hash = config_hash(cfg);
    PreparedData data;
    TrainResult result;
    std::vector<RetrievalReport> reports;
    {
        py::gil_scoped_release release;
        data = prepare_data(load_dataset(cfg), cfg);
        fs::create_directories(out_dir);
        TrainOptions options;
        options.threads = threads;
        options.checkpoint_path = out_dir / (artifact_stem("checkpoint", hash, cfg.train.seed) + ".nckp");
        result = run_train(cfg, data, options);
        reports = run_eval(cfg, data, result.checkpoint);
    }
    ReportDocument doc;
    doc.config_hash = hash;
    doc.seed = cfg.train.seed;
    py::list out_reports;
    for (const auto& r : reports) {
        doc.reports.push_back({r, std::nullopt});
        out_reports.append(report_dict(r));
    }
    const auto path = write_report(out_dir, artifact_stem("eval", hash, cfg.train.seed), doc);
    py::dict d;
    d["config_hash"] = hash;
    d["checkpoint"] = out_dir / (artifact_stem("checkpoint", hash, cfg.train.seed) + ".nckp");
    d["report"] = path;
    d["reports"] = out_reports;
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "neuroalign C++ core";
    m.attr("__version__") = "0.1.0";

    static py::exception<Error> base(m, "NeuroalignError", PyExc_RuntimeError);
    static py::exception<ConfigError> config_error(m, "ConfigError", base.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) {
                std::rethrow_exception(p);
            }
        } catch (const ConfigError& e) {
            config_error(e.what());
        } catch (const Error& e) {
            base(e.what());
        }
    });

    m.def(
        "canonical_config", [](const std::string& text) { return canonical_config(parse_config(text)); },
        py::arg("config_text"), "Sorted key=value listing of a parsed INI config, defaults filled in.");
    m.def(
        "config_hash", [](const std::string& text) { return config_hash(parse_config(text)); }, py::arg("config_text"),
        "SHA-256 of the canonical config.");
    m.def(
        "synth",
        [](const std::string& text, const fs::path& out_dir) {
            const auto cfg = parse_config(text);
            write_dataset(out_dir, synth_dataset(cfg.data.synth));
        },
        py::arg("config_text"), py::arg("out_dir"), "Write the synthetic dataset described by [data].");
    m.def("train", &train, py::arg("config_text"), py::arg("out_dir"), py::arg("threads") = 1);
    m.def(
        "validate_report", [](const std::string& text) { validate_report_json(text); }, py::arg("json_text"),
        "Raises NeuroalignError unless the text is a well-formed report.");
    m.def(
        "topk_retrieval",
        [](const FloatArray& queries, const FloatArray& gallery, const std::vector<std::size_t>& truth) {
            return report_dict(topk_retrieval(to_tensor(queries), to_tensor(gallery), truth));
        },
        py::arg("queries"), py::arg("gallery"), py::arg("true_idx"));
    m.def(
        "fovea_mask",
        [](std::size_t width, std::size_t height, double r_centre, double r_edge, double lambda) {
            FoveaParams p{r_centre, r_edge, lambda};
            const auto mask = fovea_mask(width, height, p);
            py::array_t<double> out({py::ssize_t(height), py::ssize_t(width)});
            std::copy(mask.begin(), mask.end(), out.mutable_data());
            return out;
        },
        py::arg("width"), py::arg("height"), py::arg("r_centre") = 1.0, py::arg("r_edge") = 0.0,
        py::arg("lambda_") = 3.0);
    m.def(
        "pixcorr", [](const FloatArray& a, const FloatArray& b) { return pixcorr(to_image(a), to_image(b)); },
        py::arg("a"), py::arg("b"));
    m.def(
        "ssim", [](const FloatArray& a, const FloatArray& b) { return ssim(to_image(a), to_image(b)); }, py::arg("a"),
        py::arg("b"));
    m.def(
        "read_pnm", [](const fs::path& path) { return from_image(read_pnm(path)); }, py::arg("path"));
    m.def(
        "write_pnm", [](const fs::path& path, const FloatArray& img) { write_pnm(path, to_image(img)); },
        py::arg("path"), py::arg("image"));
}

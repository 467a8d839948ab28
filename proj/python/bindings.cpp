#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pseudoseg/appg.hpp"
#include "pseudoseg/aurcl.hpp"
#include "pseudoseg/losses.hpp"
#include "pseudoseg/metrics.hpp"
#include "pseudoseg/splits.hpp"
#include "pseudoseg/synth.hpp"
#include "pseudoseg/uewf.hpp"

namespace py = pybind11;
using namespace pseudoseg;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

ProbMap probmap_from(const DArray& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    ProbMap p = make_probmap(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), p.values.begin());
    return p;
}

BinaryMask mask_from(const DArray& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
    BinaryMask m = make_mask(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    for (py::ssize_t i = 0; i < a.size(); ++i) m.pixels[i] = a.data()[i] != 0.0 ? 1 : 0;
    return m;
}

py::array to_array(int h, int w, const std::vector<double>& v) {
    py::array_t<double> out({h, w});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::array mask_to_array(const BinaryMask& m) {
    py::array_t<uint8_t> out({m.height, m.width});
    std::copy(m.pixels.begin(), m.pixels.end(), out.mutable_data());
    return out;
}

}  // namespace

PYBIND11_MODULE(_pseudoseg, mod) {
    mod.doc() = "core operations of the pseudoseg pipeline";

    // metrics
    mod.def("dice", [](const DArray& a, const DArray& b) { return dice(mask_from(a), mask_from(b)); });
    mod.def("iou", [](const DArray& a, const DArray& b) { return iou(mask_from(a), mask_from(b)); });
    mod.def("pixel_accuracy",
            [](const DArray& a, const DArray& b) { return pixel_accuracy(mask_from(a), mask_from(b)); });
    mod.def("binarize",
            [](const DArray& p, double threshold) { return mask_to_array(binarize(probmap_from(p), threshold)); },
            py::arg("probs"), py::arg("threshold") = 0.5);

    // losses
    mod.def("bce_loss", [](const DArray& p, const DArray& t) { return bce_loss(probmap_from(p), probmap_from(t)); });
    mod.def("dice_loss", [](const DArray& p, const DArray& t) { return dice_loss(probmap_from(p), probmap_from(t)); });
    mod.def("seg_loss", [](const DArray& p, const DArray& t) { return seg_loss(probmap_from(p), probmap_from(t)); });

    // uewf
    mod.def("pixel_entropy",
            [](const DArray& p, double eps) {
                auto e = pixel_entropy(probmap_from(p), eps);
                return to_array(e.height, e.width, e.values);
            },
            py::arg("probs"), py::arg("eps") = 1e-8);
    mod.def("fuse",
            [](const DArray& pa, const DArray& pb, int k, double eps, bool patchify) {
                FusionConfig cfg;
                cfg.k = k;
                cfg.eps = eps;
                cfg.patchify = patchify;
                auto f = fuse(probmap_from(pa), probmap_from(pb), cfg);
                return to_array(f.height, f.width, f.values);
            },
            py::arg("pa"), py::arg("pb"), py::arg("k") = 14, py::arg("eps") = 1e-8,
            py::arg("patchify") = true);

    // aurcl
    mod.def("adaptive_threshold",
            [](const DArray& p, double r, double tau_fix) {
                return adaptive_threshold(confidence_map(probmap_from(p)), r, tau_fix);
            },
            py::arg("probs"), py::arg("r") = 0.2, py::arg("tau_fix") = 0.2);
    mod.def("reverse_probs",
            [](const DArray& p, const DArray& m) {
                auto r = reverse_probs(probmap_from(p), mask_from(m));
                return to_array(r.height, r.width, r.values);
            });
    mod.def("aurcl_loss",
            [](const DArray& f, const DArray& g, double temperature) {
                if (f.ndim() != 2 || g.ndim() != 2)
                    throw std::invalid_argument("expected [N,D] feature arrays");
                Tensor tf({static_cast<int>(f.shape(0)), static_cast<int>(f.shape(1))});
                Tensor tg({static_cast<int>(g.shape(0)), static_cast<int>(g.shape(1))});
                std::copy(f.data(), f.data() + f.size(), tf.data.begin());
                std::copy(g.data(), g.data() + g.size(), tg.data.begin());
                return aurcl_loss({tf, FeatureView::original}, {tg, FeatureView::reversed},
                                  temperature);
            },
            py::arg("orig"), py::arg("rev"), py::arg("temperature") = 0.1);

    // splits
    mod.def("make_splits",
            [](const std::vector<std::string>& ids, double labeled_ratio, int64_t seed) {
                auto m = make_splits(ids, labeled_ratio, seed);
                py::dict d;
                d["labeled_ids"] = m.labeled_ids;
                d["unlabeled_ids"] = m.unlabeled_ids;
                d["val_ids"] = m.val_ids;
                d["test_ids"] = m.test_ids;
                return d;
            },
            py::arg("ids"), py::arg("labeled_ratio"), py::arg("seed") = 0);

    // synthetic data
    mod.def("generate_case",
            [](int image_size, int count, int64_t seed, int index) {
                SynthConfig cfg;
                cfg.image_size = image_size;
                cfg.count = count;
                cfg.seed = seed;
                auto [img, mask] = generate_case(cfg, index);
                return py::make_tuple(img.id, to_array(img.height, img.width, img.pixels),
                                      mask_to_array(mask));
            },
            py::arg("image_size"), py::arg("count"), py::arg("seed"), py::arg("index"));

    // appg
    mod.def("compose_prompt", [](const std::string& key) {
        return compose_prompt(TraitRegistry::builtin(), key).rendered;
    });
}

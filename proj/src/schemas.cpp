#include "ganorcon/data.hpp"

namespace ganorcon::data {

namespace {

LabelSchema make_schema(std::string name, std::vector<std::string> classes) {
  LabelSchema s{std::move(name), std::move(classes)};
  s.validate();
  return s;
}

}  // namespace

const LabelSchema& face19_schema() {
  static const LabelSchema s = make_schema(
      "face19", {"background", "skin",  "nose",  "eye_g", "l_eye", "r_eye", "l_brow",
                 "r_brow",     "l_ear", "r_ear", "mouth", "u_lip", "l_lip", "hair",
                 "hat",        "ear_r", "neck_l", "neck",  "cloth"});
  return s;
}

const LabelSchema& face10_schema() {
  static const LabelSchema s = make_schema(
      "face10",
      {"background", "skin", "nose", "eye", "brow", "ear", "mouth", "hair", "neck", "cloth"});
  return s;
}

const LabelSchema& face8_schema() {
  static const LabelSchema s = make_schema(
      "face8", {"background", "skin", "nose", "eye", "brow", "ear", "mouth", "hair"});
  return s;
}

const LabelSchema& face34_schema() {
  // Fine-grained face part list matching the 34-class benchmark releases.
  static const LabelSchema s = make_schema(
      "face34",
      {"background",      "head",           "cheek",
       "chin",            "ear",            "ear_helix",
       "ear_lobule",      "eye_bottom_lid", "eye_eyelashes",
       "eye_iris",        "eye_pupil",      "eye_sclera",
       "eye_tear_duct",   "eye_top_lid",    "eyebrow",
       "forehead",        "frown",          "hair",
       "hair_sideburns",  "jaw",            "moustache",
       "mouth_inferior_lip", "mouth_oral_commissure", "mouth_superior_lip",
       "mouth_teeth",     "neck",           "nose",
       "nose_ala",        "nose_bridge",    "nose_tip",
       "nostril",         "philtrum",       "temple",
       "wrinkles"});
  return s;
}

const LabelRemap& face19_to_face10() {
  // hat (14), ear_r (15) and neck_l (16) merge into background; paired
  // left/right parts and the three mouth parts collapse to single classes.
  static const LabelRemap r = [] {
    LabelRemap m;
    m.source = "face19";
    m.target = "face10";
    m.map = {0, 1, 2, 3, 3, 3, 4, 4, 5, 5, 6, 6, 6, 7, 0, 0, 0, 8, 9};
    m.validate(face19_schema().num_classes(), face10_schema().num_classes());
    return m;
  }();
  return r;
}

const LabelRemap& face10_to_face8() {
  // neck (8) and cloth (9) merge into background.
  static const LabelRemap r = [] {
    LabelRemap m;
    m.source = "face10";
    m.target = "face8";
    m.map = {0, 1, 2, 3, 4, 5, 6, 7, 0, 0};
    m.validate(face10_schema().num_classes(), face8_schema().num_classes());
    return m;
  }();
  return r;
}

const LabelRemap& face34_to_face8() {
  // Best-effort merge derived from class-name matching; not published as a
  // table anywhere, so treat the shipped JSON as editable ground truth.
  static const LabelRemap r = [] {
    LabelRemap m;
    m.source = "face34";
    m.target = "face8";
    m.map = {
        0,  // background
        1,  // head -> skin
        1,  // cheek -> skin
        1,  // chin -> skin
        5,  // ear
        5,  // ear_helix
        5,  // ear_lobule
        3,  // eye_bottom_lid
        3,  // eye_eyelashes
        3,  // eye_iris
        3,  // eye_pupil
        3,  // eye_sclera
        3,  // eye_tear_duct
        3,  // eye_top_lid
        4,  // eyebrow -> brow
        1,  // forehead -> skin
        1,  // frown -> skin
        7,  // hair
        7,  // hair_sideburns
        1,  // jaw -> skin
        1,  // moustache -> skin
        6,  // mouth_inferior_lip
        6,  // mouth_oral_commissure
        6,  // mouth_superior_lip
        6,  // mouth_teeth
        0,  // neck -> background (face8 has no neck class)
        2,  // nose
        2,  // nose_ala
        2,  // nose_bridge
        2,  // nose_tip
        2,  // nostril
        1,  // philtrum -> skin
        1,  // temple -> skin
        1,  // wrinkles -> skin
    };
    m.validate(face34_schema().num_classes(), face8_schema().num_classes());
    return m;
  }();
  return r;
}

const LabelSchema* find_builtin_schema(const std::string& name) {
  for (const LabelSchema* s :
       {&face19_schema(), &face10_schema(), &face8_schema(), &face34_schema()}) {
    if (s->name == name) return s;
  }
  return nullptr;
}

}  // namespace ganorcon::data

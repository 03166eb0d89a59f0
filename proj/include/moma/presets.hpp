#pragma once
// Built-in prompt presets for the shipped clinical tasks. Preset bodies are
// frozen verbatim (tests pin their SHA-256 digests); each one ends with a
// single appended placeholder marking where runtime content is inserted:
//
//   *_aggregator            {{clinical_and_summaries}}
//   alcohol_lab_specialist  {{modality_data}}
//   llava_summarize_*       {{clinical_notes}}
//   llava_classify_*        {{note_summary}}

#include <array>
#include <string>
#include <vector>

#include "moma/prompt.hpp"

namespace moma {
namespace detail_presets {

struct PresetDef {
    const char* name;
    const char* placeholder;
    const char* body;
};

inline const std::array<PresetDef, 8>& preset_defs() {
    static const std::array<PresetDef, 8> defs = {{
        {"chest_aggregator", "clinical_and_summaries",
         R"MOMA(As an experienced trauma physician, your task is to review the clinical notes, radiology
reports, and LLM-generated radiology reports. Write a summary focusing on identifying and
summarizing chest trauma injuries, and determine the chest Abbreviated Injury Scale (AIS).

Follow these steps to complete the task:

	1. Extract and summarize information related to the severity of chest trauma from the provided 
    clinical notes and radiology reports. Do not include injuries in body regions outside the chest.
    
	2. If the reports of X-RAY CHEST AP/PA/Single VIEW are not available, summarize the LLM-generated 
    radiology reports as complementary information. Ensure that the LLM-generated reports do 
    not overwrite clinical notes if they contradict each other.
    
	3. Based on your summary, determine the chest AIS score (ranging from 0 to 6).
    Ensure the assessment is exclusively based on trauma-related conditions/symptoms.
    
	4. Provide your conclusion as a single-digit number ranging from 0 to 6.

{{clinical_and_summaries}})MOMA"},
        {"multitask_aggregator", "clinical_and_summaries",
         R"MOMA(As an experienced trauma physician, your task is to review the clinical notes, radiology
reports, and LLM-generated radiology reports. Write a summary focusing on identifying and
summarizing chest and spine trauma injuries, and determine the chest Abbreviated Injury Scale (AIS).

Follow these steps to complete the task:

	1. Extract and summarize information related to the severity of only chest 
    and spine trauma from the provided 
    clinical notes and radiology reports. Do not include injuries in body regions
    outside chest and spine.
    
	2. If the reports of X-RAY CHEST AP/PA/Single VIEW are not available, summarize
    the LLM-generated radiology reports as complementary information. Ensure that 
    the LLM-generated reports do not overwrite clinical notes if they contradict each other.
    
	3. Based only on trauma-related conditions or symptoms, assign an Abbreviated 
    Injury Scale (AIS) score (0–6) for each region.
    Remember that only conditions/symptoms caused by trauma injuries should be 
    used to determine the AIS scores.
    
	4. Based on the AIS scores of chest and spine injuries, translate to the Severity
    Category for chest and spine:
    AIS = 0 → Negative
    AIS = 1 or AIS = 2 → Moderate
    AIS > 2 → Serious

{{clinical_and_summaries}})MOMA"},
        {"alcohol_lab_specialist", "modality_data",
         R"MOMA(As an expert in screening for unhealthy alcohol use, carefully review the provided lab 
measurements and generate a concise summary highlighting potential indicators of unhealthy 
alcohol use based on your analysis. Let's think through this step by step:
1. Identify any initial measurements commonly linked to alcohol consumption or misuse like serum 
blood alcohol levels.
2. Consider labs with indirect evidence for unhealthy alcohol consumption (e.g., elevated liver
enzymes, mean corpuscular volume).
3. Incorporate labs that have previously been shown to serve as biomarkers of unhealthy alcohol 
use.

Make sure your response is short and concise. Avoid being verbose.

Here are a few examples:
Direct Indicator: The serum blood alcohol level of 12 mg/dL is above the legal 
limit and indicates recent alcohol consumption.
Indirect Evidence: Elevated AST and ALT levels, along with an increased MCV, suggest liver 
dysfunction and macrocytosis, both of which are commonly associated with chronic alcohol misuse.
Biomarker: The GGT level is significantly elevated, which can serve as a biomarker for 
heavy alcohol use.

{{modality_data}})MOMA"},
        {"alcohol_aggregator", "clinical_and_summaries",
         R"MOMA(Role:
You are an alcohol screener working within a healthcare system, responsible for 
determining whether a patient has exhibited signs of unhealthy alcohol use over the 
past three months. Your evaluation will be based on clinical summaries generated by 
LLM agents, which include clinical notes and lab measurements.

Objective:
Develop a focused summary of the patient’s alcohol use. Ensure that no personally 
identifiable information (PHI) is included.

Task Instructions:

1. Assess Evidence of Alcohol Misuse:
	- Review the clinical summaries to identify any details related to alcohol use, 
    including behavioral patterns, attempts to manage drinking, or external concerns.
	- Focus on direct evidence and ensure the summary highlights key findings related to 
    alcohol use while avoiding unnecessary or redundant information.

2. Summarize Lab Measurements:
	- Pay close attention to direct evidence from lab results, such as blood alcohol 
    concentration (BAC) levels, as they provide clear indications of alcohol use.
	- Include other lab abnormalities only if they are explicitly connected to alcohol use.

3. Evaluate Causes of Lab Abnormalities:
	- For any mentioned lab abnormalities, review the clinical summaries to determine if 
    they may have causes unrelated to alcohol use.
	- Exclude such lab results from the summary and explicitly state when a lab abnormality
    have an alternative cause.

4. Compose a Unified Summary:
	- Write a comprehensive summary of the patient’s alcohol use, integrating relevant 
    details from both the clinical summaries and lab results.
	- Ensure the summary prioritizes key findings, focusing primarily on direct evidence
    such as BAC levels and behavioral indications of alcohol use.

{{clinical_and_summaries}})MOMA"},
        {"llava_summarize_multitask", "clinical_notes",
         R"MOMA(You are a clinical summarization assistant.
Your job is to read the given ED notes and radiology reports, then extract only
the details related to chest trauma and spine trauma, separately.

1. Produce two labeled sections in your response:
 - Chest Trauma Summary: 
 - Spine Trauma Summary: 

2. Keep each summary short and self-contained. Do not mention or quote which 
section(s) of the note the information came from.

3. If no chest trauma is mentioned, exactly reply:
> No chest trauma mentioned in the clinical note.
   If no spine trauma is mentioned, exactly reply:
> No spine trauma mentioned in the clinical note.
   If neither chest nor spine trauma is mentioned, exactly reply:
> No chest or spine trauma mentioned in the clinical note.

4. Do not include any additional commentary or information beyond the two summaries
or one of the exact “No … mentioned” statements.

{{clinical_notes}})MOMA"},
        {"llava_summarize_chest", "clinical_notes",
         R"MOMA(You are a clinical summarization assistant.
Your job is to read the given ED notes and radiology reports, then extract only the
details related to chest trauma.

1. Keep the summary short and self-contained. Do not mention or quote which 
section(s) of the note the information came from.

3. If no chest trauma is mentioned, exactly reply:
> No chest trauma mentioned in the clinical note.

4. Do not include any additional commentary or information beyond the summary or the
exact “No … mentioned” statements.

{{clinical_notes}})MOMA"},
        {"llava_classify_chest", "note_summary",
         R"MOMA(You are a radiology assistant specialized in chest trauma.
Given a chest X-ray and a brief clinical note summary,
classify the trauma severity on a scale from:
0 = no trauma
1 = minor or moderate trauma
2 = serious or greater than serious trauma
Reply with exactly one integer (like '1,2').

{{note_summary}})MOMA"},
        {"llava_classify_multitask", "note_summary",
         R"MOMA(You are a radiology assistant specialized in chest and spine trauma.
Given a chest X-ray and a brief clinical note summary,
classify the trauma severity on a scale from:
0 = no trauma
1 = minor or moderate trauma
2 = serious or greater than serious trauma
Reply with exactly two integers separated by comma (like '1,2'), one for chest 
and one for spine, and no other text.

{{note_summary}})MOMA"},
    }};
    return defs;
}

} // namespace detail_presets

inline std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const auto& d : detail_presets::preset_defs()) names.emplace_back(d.name);
    return names;
}

inline PromptTemplate preset(const std::string& name) {
    for (const auto& d : detail_presets::preset_defs())
        if (name == d.name) return make_template(d.name, d.body);
    std::string msg = "unknown preset '" + name + "'; available:";
    for (const auto& d : detail_presets::preset_defs()) msg += std::string(" ") + d.name;
    throw TemplateError(msg);
}

} // namespace moma
